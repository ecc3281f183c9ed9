//! Topological invariants of a traced fiber.
//!
//! A regular fiber of `F: R^n -> R^(n-1)` is a disjoint union of circles and
//! lines, so its topology is fully described by the two counts `s` (compact
//! components) and `l` (non-compact ones): `b0 = s + l`, `b1 = s`, and the
//! Euler characteristic is `l`. An independent route to the Euler
//! characteristic counts transversal intersections of the fiber with large
//! spheres: for `R` large enough, half the crossing count of the sphere of
//! radius `R` equals the number of line components. The two routes are
//! computed separately and cross-validated.

use nalgebra::DVector;
use thiserror::Error;

use crate::newton::fiber_tangent;
use crate::poly::PolynomialMap;
use crate::trace::{
    enumerate_fiber, solve_on_sphere, BoundarySide, ComponentKind, FiberComponent, FiberSnapshot,
    TraceConfig, SINGULAR_TOL,
};

/// Invariant record of one fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberTopology {
    pub parameter: Vec<f64>,
    /// Compact (circle) components.
    pub s: usize,
    /// Non-compact (arc) components.
    pub l: usize,
    pub b0: usize,
    pub b1: usize,
    /// Euler characteristic from the component census: one per interval.
    pub chi_components: i64,
    /// Euler characteristic from the stabilized sphere-crossing count.
    pub chi_sphere: i64,
    /// Largest over components of the minimal norm on the component.
    pub mu: f64,
    /// The reported `mu` is only a lower bound (some minimum sat on the
    /// working-region boundary).
    pub mu_lower_bound: bool,
    /// Both Euler routes stabilized and agree.
    pub stabilized: bool,
    /// Ball radius the census was finally computed at.
    pub radius_used: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("component is tainted or incomplete; classification unreliable")]
    Unreliable,
    #[error("inconsistent evidence: closed loop with {hits} boundary hits")]
    Inconsistent { hits: usize },
}

/// Circle or arc, from trace evidence.
pub fn classify(component: &FiberComponent) -> Result<ComponentKind, ClassifyError> {
    if component.tainted || component.incomplete {
        return Err(ClassifyError::Unreliable);
    }
    match component.kind {
        ComponentKind::Circle if component.boundary_hits.is_empty() => Ok(ComponentKind::Circle),
        ComponentKind::Circle => Err(ClassifyError::Inconsistent {
            hits: component.boundary_hits.len(),
        }),
        ComponentKind::Arc if component.boundary_hits.len() == 2 => Ok(ComponentKind::Arc),
        ComponentKind::Arc => Err(ClassifyError::Inconsistent {
            hits: component.boundary_hits.len(),
        }),
    }
}

/// Result of the sphere-crossing count over a radius ladder.
#[derive(Clone, Debug)]
pub struct EulerEstimate {
    /// `(radius, transversal crossing count)` per ladder rung.
    pub counts: Vec<(f64, usize)>,
    /// Half the crossing count at the largest rung.
    pub chi: i64,
    /// Last two rungs agree and the final count is even.
    pub stabilized: bool,
}

/// Counts transversal solutions of `{F(x) = t, |x| = r}`, retrying with a
/// slightly perturbed radius when a tangential intersection is detected.
fn sphere_crossing_count(
    map: &PolynomialMap,
    target: &DVector<f64>,
    radius: f64,
    cfg: &TraceConfig,
) -> usize {
    let n = map.domain_dim();
    let mut r = radius;
    'retry: for _ in 0..4 {
        let mut found: Vec<DVector<f64>> = Vec::new();
        let per_axis = cfg.seed_grid.max(8);
        let lattice = super::trace::lattice_for_sphere(n, per_axis);
        for dir in &lattice {
            let start = dir * r;
            let Some(x) = solve_on_sphere(map, target, r, &start, cfg.newton_tol, cfg.newton_max_iter)
            else {
                continue;
            };
            if (x.norm() - r).abs() > 1e-6 * r.max(1.0) {
                continue;
            }
            // Tangency check: the fiber tangent must not be orthogonal to the
            // radial direction.
            let jac = map.jacobian_matrix(&x);
            let Some((tan, sv)) = fiber_tangent(&jac) else { continue };
            if sv < SINGULAR_TOL {
                continue;
            }
            let radial = tan.dot(&x).abs() / r;
            if radial < 1e-6 {
                r *= 1.01;
                continue 'retry;
            }
            let dup_tol = (1e-8 * r.max(1.0)).max(100.0 * cfg.newton_tol);
            if found.iter().all(|p| (p - &x).norm() > dup_tol) {
                found.push(x);
            }
        }
        return found.len();
    }
    0
}

/// Euler characteristic via the sphere-crossing count over a strictly
/// increasing radius ladder. Stabilization requires the last two counts to
/// agree and to be even.
pub fn euler_via_sphere(
    map: &PolynomialMap,
    target: &DVector<f64>,
    cfg: &TraceConfig,
    ladder: &[f64],
) -> EulerEstimate {
    assert!(ladder.len() >= 2, "ladder needs at least two rungs");
    debug_assert!(ladder.windows(2).all(|w| w[0] < w[1]));
    let counts: Vec<(f64, usize)> = ladder
        .iter()
        .map(|&r| (r, sphere_crossing_count(map, target, r, cfg)))
        .collect();
    let last = counts[counts.len() - 1].1;
    let prev = counts[counts.len() - 2].1;
    let stabilized = last == prev && last % 2 == 0;
    EulerEstimate {
        chi: (last / 2) as i64,
        counts,
        stabilized,
    }
}

/// Default radius ladder on top of the working radius.
pub fn default_ladder(radius: f64) -> Vec<f64> {
    vec![radius, 2.0 * radius, 4.0 * radius, 8.0 * radius]
}

fn census(snapshot: &FiberSnapshot) -> (usize, usize) {
    let mut s = 0;
    let mut l = 0;
    for c in &snapshot.components {
        match c.kind {
            ComponentKind::Circle => s += 1,
            ComponentKind::Arc => l += 1,
        }
    }
    (s, l)
}

/// Exterior-mode Euler characteristic needs inner-sphere endpoints counted as
/// interval ends too; each interval has two ends split across the two
/// spheres, each circle none.
fn inner_hit_count(snapshot: &FiberSnapshot) -> usize {
    snapshot
        .components
        .iter()
        .flat_map(|c| &c.boundary_hits)
        .filter(|h| h.side == BoundarySide::Inner)
        .count()
}

/// Computes the full invariant record for the fiber behind `snapshot`,
/// cross-validating the component census against the sphere-crossing route.
/// On a mismatch the fiber is re-enumerated once at twice the radius — a
/// component that leaves and re-enters the ball looks like several pieces at
/// the smaller radius.
pub fn fiber_invariants(
    map: &PolynomialMap,
    snapshot: &FiberSnapshot,
    cfg: &TraceConfig,
) -> (FiberTopology, FiberSnapshot) {
    let mut snap = snapshot.clone();
    let mut cfg_used = cfg.with_radius(snapshot.radius);
    cfg_used.inner_radius = snapshot.inner_radius;

    for attempt in 0..2 {
        let (s, l) = census(&snap);
        let euler = euler_via_sphere(map, &snap.parameter, &cfg_used, &default_ladder(cfg_used.radius));
        let chi_sphere = if snap.inner_radius.is_some() {
            // Every interval end on the inner sphere replaces a crossing the
            // outer count cannot see.
            let outer = euler.counts.last().unwrap().1;
            ((outer + inner_hit_count(&snap)) / 2) as i64
        } else {
            euler.chi
        };
        let chi_components = l as i64;
        let stabilized = euler.stabilized && chi_sphere == chi_components && !snap.tainted;
        if stabilized || attempt == 1 {
            let (mu, mu_lower) = snap.mu();
            let topo = FiberTopology {
                parameter: snap.parameter.as_slice().to_vec(),
                s,
                l,
                b0: s + l,
                b1: s,
                chi_components,
                chi_sphere,
                mu,
                mu_lower_bound: mu_lower,
                stabilized,
                radius_used: cfg_used.radius,
            };
            return (topo, snap);
        }
        cfg_used = cfg_used.with_radius(2.0 * cfg_used.radius);
        snap = enumerate_fiber(map, &snap.parameter, &cfg_used);
    }
    unreachable!()
}

/// Convenience: enumerate and compute invariants in one call.
pub fn invariants_at(
    map: &PolynomialMap,
    target: &DVector<f64>,
    cfg: &TraceConfig,
) -> (FiberTopology, FiberSnapshot) {
    let snap = enumerate_fiber(map, target, cfg);
    fiber_invariants(map, &snap, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map2(text: &str) -> PolynomialMap {
        PolynomialMap::parse(text, &["x", "y"]).unwrap()
    }

    fn t1(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn classify_fixtures() {
        let cfg = TraceConfig::for_dimension(2);
        let circle = crate::trace::trace_component(
            &map2("x^2 + y^2"),
            &t1(1.0),
            &DVector::from_vec(vec![1.0, 0.0]),
            &cfg,
        );
        assert_eq!(classify(&circle).unwrap(), ComponentKind::Circle);

        let line = crate::trace::trace_component(
            &map2("x"),
            &t1(0.0),
            &DVector::from_vec(vec![0.0, 1.0]),
            &cfg,
        );
        assert_eq!(classify(&line).unwrap(), ComponentKind::Arc);

        let graph = crate::trace::trace_component(
            &map2("y*(x^2+1)"),
            &t1(1.0),
            &DVector::from_vec(vec![0.0, 1.0]),
            &cfg,
        );
        assert_eq!(classify(&graph).unwrap(), ComponentKind::Arc);
    }

    #[test]
    fn euler_counts_two_branch_fiber() {
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let e = euler_via_sphere(&f, &t1(0.5), &cfg, &default_ladder(10.0));
        assert!(e.stabilized, "counts: {:?}", e.counts);
        assert_eq!(e.chi, 2);
        assert_eq!(e.counts.last().unwrap().1, 4);
    }

    #[test]
    fn euler_counts_three_line_fiber() {
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let e = euler_via_sphere(&f, &t1(0.0), &cfg, &default_ladder(10.0));
        assert!(e.stabilized, "counts: {:?}", e.counts);
        assert_eq!(e.chi, 3);
        assert_eq!(e.counts.last().unwrap().1, 6);
    }

    #[test]
    fn euler_zero_for_compact_fiber() {
        let f = map2("x^2 + y^2");
        let cfg = TraceConfig::for_dimension(2);
        let e = euler_via_sphere(&f, &t1(1.0), &cfg, &default_ladder(10.0));
        assert!(e.stabilized);
        assert_eq!(e.chi, 0);
        assert!(e.counts.iter().all(|&(_, c)| c == 0));
    }

    #[test]
    fn invariants_fixtures() {
        let cfg = TraceConfig::for_dimension(2);

        let f = map2("x + x^2*y");
        let (topo, _) = invariants_at(&f, &t1(1.0), &cfg);
        assert_eq!((topo.s, topo.l, topo.b0, topo.b1), (0, 2, 2, 0));
        assert_eq!(topo.chi_components, 2);
        assert!(topo.stabilized);

        let g = map2("y*(x^2+1)");
        let (topo, _) = invariants_at(&g, &t1(0.3), &cfg);
        assert_eq!((topo.s, topo.l, topo.b0, topo.b1), (0, 1, 1, 0));
        assert_eq!(topo.chi_components, 1);
        assert!(topo.stabilized);

        let line = map2("x");
        let (topo, _) = invariants_at(&line, &t1(0.7), &cfg);
        assert!((topo.mu - 0.7).abs() < 1e-8, "mu = {}", topo.mu);
    }

    #[test]
    fn sphere_route_equals_component_route_on_fixtures() {
        let cfg = TraceConfig::for_dimension(2);
        for (text, ts) in [
            ("x + x^2*y", vec![0.5, 1.0, -0.5]),
            ("y*(x^2+1)", vec![-1.0, 0.0, 0.5]),
            ("x^2 + y^2", vec![1.0, 4.0]),
            ("x", vec![0.0, 0.7]),
        ] {
            let m = map2(text);
            for t in ts {
                let (topo, _) = invariants_at(&m, &t1(t), &cfg);
                assert!(topo.stabilized, "{text} at {t}: not stabilized");
                assert_eq!(
                    topo.chi_sphere, topo.chi_components,
                    "{text} at {t}: sphere {} vs census {}",
                    topo.chi_sphere, topo.chi_components
                );
                assert_eq!(topo.chi_components, topo.l as i64);
            }
        }
    }

    #[test]
    fn mu_stable_under_radius_doubling() {
        let cfg = TraceConfig::for_dimension(2);
        let big = cfg.with_radius(20.0);
        for (text, t) in [("x + x^2*y", 0.5), ("y*(x^2+1)", 0.4), ("x", 0.7)] {
            let m = map2(text);
            let (a, _) = invariants_at(&m, &t1(t), &cfg);
            let (b, _) = invariants_at(&m, &t1(t), &big);
            assert!(
                (a.mu - b.mu).abs() <= 1e-6 * a.mu.max(1.0),
                "{text}: mu {} vs {}",
                a.mu,
                b.mu
            );
        }
    }

    #[test]
    fn escalation_resolves_in_ball_splitting() {
        // At small t the right-hand branch of x(1+xy) = t dips below the
        // working ball and comes back, so the census at radius 10 sees three
        // arcs while the true fiber has two lines; the doubled radius fixes
        // the census.
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let (topo, _) = invariants_at(&f, &t1(0.015625), &cfg);
        assert!(topo.stabilized, "expected escalation to stabilize");
        assert_eq!(topo.l, 2);
        assert_eq!(topo.chi_sphere, 2);
        assert!(topo.radius_used >= 20.0);
    }
}
