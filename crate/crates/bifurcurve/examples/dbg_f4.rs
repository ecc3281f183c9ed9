use bifurcurve::poly::PolynomialMap;
use bifurcurve::trace::{enumerate_fiber, TraceConfig};
use nalgebra::DVector;

fn main() {
    let f = PolynomialMap::parse("x + x^2*y", &["x", "y"]).unwrap();
    for (t, r) in [(0.0078125, 40.0), (0.015625, 40.0), (0.03125, 10.4)] {
        let cfg = TraceConfig::for_dimension(2).with_radius(r);
        let snap = enumerate_fiber(&f, &DVector::from_vec(vec![t]), &cfg);
        println!("t={t} r={r}: comps={} tainted={} audit={:?}", snap.components.len(), snap.tainted, snap.seed_audit);
        for c in &snap.components {
            println!("   kind={:?} pts={} first=({:.4},{:.4}) last=({:.4},{:.4}) minn={:.4} inc={}",
                c.kind, c.points.len(), c.points[0][0], c.points[0][1],
                c.points.last().unwrap()[0], c.points.last().unwrap()[1], c.min_norm, c.incomplete);
        }
    }
}
