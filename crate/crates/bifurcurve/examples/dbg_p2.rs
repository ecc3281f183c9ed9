use bifurcurve::asymptotics::ApproachSpec;
use bifurcurve::milnor::{parity_test, MilnorContext};
use bifurcurve::poly::PolynomialMap;
use bifurcurve::session::Session;
use bifurcurve::trace::TraceConfig;

fn main() {
    let f = PolynomialMap::parse("x + x^2*y", &["x", "y"]).unwrap();
    let session = Session::new(&f, TraceConfig::for_dimension(2));
    let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &session.cfg).unwrap();
    let approach = ApproachSpec::default_for(&[0.0], 0);
    let report = parity_test(&session, &ctx, 0.0, &approach);
    println!("in_s_c={} verdict={:?}", report.in_s_c, report.verdict);
    for t in &report.tracks {
        println!("  dir={} parities={:?} stab={} stable={:?} wit={:?}",
                 t.direction, t.parities, t.stabilized, t.stable_parity, t.witness_point);
    }
}
