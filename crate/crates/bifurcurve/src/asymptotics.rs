//! Detectors for the infinity phenomena behind atypical values.
//!
//! Near a candidate value `a` three things can go wrong at infinity even when
//! no critical point is present: a whole component of nearby fibers can
//! escape every ball (vanishing), a single nearby component can converge onto
//! two or more components of the limit fiber (splitting), and a family of
//! ovals can blow up into an unbounded limit (circle breaking). Each detector
//! samples fibers along finitely many geometric approach rays.
//!
//! Verdict semantics are deliberately asymmetric: `Fail` means a concrete
//! counterexample was found and is sound; `Pass` means no counterexample
//! appeared across the sampled rays, which is evidence, not proof;
//! `Inconclusive` is everything else.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::newton::{self, fiber_tangent, solve_square};
use crate::poly::PolynomialMap;
use crate::session::Session;
use crate::trace::{
    distance_if_on_component, ComponentKind, FiberComponent, FiberSnapshot, TraceConfig,
};

/// Three-valued detector verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Pass,
    Fail,
    Inconclusive,
}

/// Finitely many geometric rays approaching a target value.
#[derive(Clone, Debug)]
pub struct ApproachSpec {
    pub target: Vec<f64>,
    /// Unit vectors in the parameter space.
    pub directions: Vec<DVector<f64>>,
    /// Strictly decreasing scales.
    pub scales: Vec<f64>,
}

impl ApproachSpec {
    /// Axis directions plus four seeded random ones (deduplicated), scales
    /// `0.5 * 0.5^k` for `k = 0..7`.
    pub fn default_for(target: &[f64], seed: u64) -> Self {
        let p = target.len();
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        let mut push = |d: DVector<f64>| {
            if dirs.iter().all(|q| (q - &d).norm() > 1e-9) {
                dirs.push(d);
            }
        };
        for i in 0..p {
            let mut e = DVector::zeros(p);
            e[i] = 1.0;
            push(e.clone());
            push(-e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1a6_0f5e);
        for _ in 0..4 {
            let mut v = DVector::from_iterator(p, (0..p).map(|_| rng.gen_range(-1.0..1.0)));
            let n = v.norm();
            if n < 1e-9 {
                continue;
            }
            v /= n;
            push(v);
        }
        let scales = (0..7).map(|k| 0.5 * 0.5f64.powi(k)).collect();
        ApproachSpec {
            target: target.to_vec(),
            directions: dirs,
            scales,
        }
    }

    pub fn sample(&self, dir: &DVector<f64>, scale: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.target.len(),
            self.target.iter().zip(dir.iter()).map(|(t, d)| t + d * scale),
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scales.is_empty() || self.directions.is_empty() {
            return Err("approach needs at least one direction and scale".into());
        }
        if !self.scales.windows(2).all(|w| w[0] > w[1]) || *self.scales.last().unwrap() <= 0.0 {
            return Err("scales must be strictly decreasing and positive".into());
        }
        if self.directions.iter().any(|d| (d.norm() - 1.0).abs() > 1e-9) {
            return Err("directions must be unit vectors".into());
        }
        Ok(())
    }
}

/// Correspondence from the components of a base fiber to the components of a
/// nearby fiber, produced by correcting each base seed onto the other fiber.
#[derive(Clone, Debug)]
pub struct ComponentMatching {
    /// Per base component: matched component of the other fiber, if any.
    pub assignment: Vec<Option<usize>>,
    pub is_bijection: bool,
    pub unmatched_base: Vec<usize>,
    pub unmatched_other: Vec<usize>,
}

/// Matches each component of `base` to the component of `other` reached by a
/// Newton correction of its minimal-norm point, moving orthogonally to the
/// base tangent.
pub fn match_components(
    map: &PolynomialMap,
    base: &FiberSnapshot,
    other: &FiberSnapshot,
    cfg: &TraceConfig,
) -> ComponentMatching {
    let dt = (&other.parameter - &base.parameter).norm();
    let allowance = (4.0 * dt.sqrt()).max(1e-3 * cfg.radius);
    let mut assignment: Vec<Option<usize>> = Vec::with_capacity(base.components.len());
    for comp in &base.components {
        let z = &comp.min_norm_point;
        let corrected = correct_onto_fiber(map, z, &other.parameter, cfg);
        let idx = corrected.and_then(|x| {
            if (&x - z).norm() > allowance {
                return None;
            }
            other.component_containing(map, &x, cfg)
        });
        assignment.push(idx);
    }
    let unmatched_base: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(i, _)| i)
        .collect();
    let mut hit = vec![false; other.components.len()];
    let mut injective = true;
    for a in assignment.iter().flatten() {
        if hit[*a] {
            injective = false;
        }
        hit[*a] = true;
    }
    let unmatched_other: Vec<usize> = hit
        .iter()
        .enumerate()
        .filter(|(_, h)| !**h)
        .map(|(i, _)| i)
        .collect();
    let is_bijection = unmatched_base.is_empty() && injective && unmatched_other.is_empty();
    ComponentMatching {
        assignment,
        is_bijection,
        unmatched_base,
        unmatched_other,
    }
}

/// Newton correction of `z` onto the fiber over `target`, constrained to move
/// orthogonally to the fiber tangent at `z`.
fn correct_onto_fiber(
    map: &PolynomialMap,
    z: &DVector<f64>,
    target: &DVector<f64>,
    cfg: &TraceConfig,
) -> Option<DVector<f64>> {
    let jac = map.jacobian_matrix(z);
    let (tau, _) = fiber_tangent(&jac)?;
    let m = map.target_dim();
    let f = |x: &DVector<f64>| {
        let v = map.residual(x, target);
        v.insert_row(m, tau.dot(&(x - z)))
    };
    let j = |x: &DVector<f64>| {
        let mut jm = map.jacobian_matrix(x);
        jm = jm.insert_row(m, 0.0);
        for k in 0..x.len() {
            jm[(m, k)] = tau[k];
        }
        jm
    };
    let tol = cfg.newton_tol.max(map.noise_floor(z));
    solve_square(f, j, z, tol, cfg.newton_max_iter).map(|o| o.point)
}

/// Estimated limit of one tracked component: the set of base components its
/// points converge onto.
#[derive(Clone, Debug)]
pub struct LimitSetEstimate {
    pub receiving: BTreeSet<usize>,
    /// No projection converged inside the working region: the component
    /// escaped.
    pub empty: bool,
    /// Some projection sat within tolerance of two base components.
    pub ambiguous: bool,
}

/// Projects sample points of `tracked` (a component of a fiber at distance
/// `scale` from the base parameter) onto the base fiber and reports which
/// base components receive them. Displacements above `sqrt(scale)` are
/// rejected as non-convergent.
pub fn limit_set(
    map: &PolynomialMap,
    base: &FiberSnapshot,
    tracked: &FiberComponent,
    scale: f64,
    cfg: &TraceConfig,
) -> LimitSetEstimate {
    let mut receiving = BTreeSet::new();
    let mut ambiguous = false;
    let n = tracked.points.len();
    let samples = n.min(200);
    for k in 0..samples {
        let idx = (k * (n - 1) / samples.max(1)).min(n - 1);
        let p = &tracked.points[idx];
        let Some(proj) = newton::project_least_norm(
            |x| map.residual(x, &base.parameter),
            |x| map.jacobian_matrix(x),
            p,
            cfg.newton_tol.max(map.noise_floor(p)),
            cfg.newton_max_iter,
        ) else {
            continue;
        };
        let q = proj.point;
        if (&q - p).norm() > scale.sqrt() || q.norm() > base.radius {
            continue;
        }
        let mut hits: Vec<usize> = Vec::new();
        for (i, c) in base.components.iter().enumerate() {
            if distance_if_on_component(map, &base.parameter, c, &q, cfg).is_some() {
                hits.push(i);
            }
        }
        if hits.len() > 1 {
            ambiguous = true;
        }
        if let Some(&i) = hits.first() {
            receiving.insert(i);
        }
    }
    LimitSetEstimate {
        empty: receiving.is_empty(),
        receiving,
        ambiguous,
    }
}

/// One mu series along one approach direction. Scales where the fiber left
/// the working ball entirely carry `INFINITY`.
#[derive(Clone, Debug)]
pub struct MuSeries {
    pub direction: Vec<f64>,
    pub values: Vec<f64>,
}

/// Structured counterexample evidence.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Witness {
    pub kind: WitnessKind,
    pub direction: Vec<f64>,
    pub scale: f64,
    /// Component index in the fiber at that direction and scale.
    pub component: Option<usize>,
    /// Base component indices a splitting track converges onto.
    pub receiving: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    Splitting,
    Vanishing,
    CircleBreaking,
}

fn strictly_increasing_tail(values: &[f64], window: usize) -> bool {
    if values.len() < window {
        return false;
    }
    values[values.len() - window..].windows(2).all(|w| {
        (w[0].is_infinite() && w[1].is_infinite()) || w[0] < w[1]
    })
}

/// Vanishing detector: watches the largest minimal component norm along each
/// approach ray. A ray whose series keeps growing and ends beyond half the
/// working radius is a sound failure; bounded series on every ray pass.
pub fn detect_vanishing(
    session: &Session,
    approach: &ApproachSpec,
) -> (Flag, Vec<MuSeries>, Vec<Witness>) {
    let verdict = vanishing_once(session, approach, &session.cfg);
    match verdict {
        (Flag::Inconclusive, _, _) => {
            // One escalation with a doubled working radius.
            let big = session.cfg.with_radius(2.0 * session.cfg.radius);
            vanishing_once(session, approach, &big)
        }
        done => done,
    }
}

fn vanishing_once(
    session: &Session,
    approach: &ApproachSpec,
    cfg: &TraceConfig,
) -> (Flag, Vec<MuSeries>, Vec<Witness>) {
    let radius = cfg.radius;
    let mut series_out = Vec::new();
    let mut witnesses = Vec::new();
    let mut any_tainted = false;
    let mut any_fail = false;
    let mut all_bounded = true;
    for dir in &approach.directions {
        let mut values = Vec::with_capacity(approach.scales.len());
        let mut seen_nonempty = false;
        for &scale in &approach.scales {
            let t = approach.sample(dir, scale);
            let snap = session.snapshot_with(&t, cfg);
            if snap.tainted {
                any_tainted = true;
            }
            if snap.is_empty() {
                // An empty fiber after a nonempty one means everything left
                // the ball; before any fiber was seen it just means the ray
                // is outside the image.
                values.push(if seen_nonempty { f64::INFINITY } else { f64::NAN });
            } else {
                seen_nonempty = true;
                values.push(snap.mu().0);
            }
        }
        let finite_or_inf: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        if !finite_or_inf.is_empty() {
            let last = *finite_or_inf.last().unwrap();
            if last > radius / 2.0 && strictly_increasing_tail(&finite_or_inf, 4) {
                any_fail = true;
                witnesses.push(Witness {
                    kind: WitnessKind::Vanishing,
                    direction: dir.as_slice().to_vec(),
                    scale: *approach.scales.last().unwrap(),
                    component: None,
                    receiving: Vec::new(),
                });
            }
            if finite_or_inf.iter().any(|&v| !(v <= radius / 4.0)) {
                all_bounded = false;
            }
        }
        series_out.push(MuSeries {
            direction: dir.as_slice().to_vec(),
            values,
        });
    }
    let flag = if any_fail {
        Flag::Fail
    } else if any_tainted {
        Flag::Inconclusive
    } else if all_bounded {
        Flag::Pass
    } else {
        Flag::Inconclusive
    };
    (flag, series_out, witnesses)
}

/// Component identity chains across the scales of one ray, anchored at the
/// smallest scale and matched consecutively upward.
#[derive(Clone, Debug)]
pub struct ComponentTrack {
    /// `ids[k]` is the component index at scale `k` (0 = largest scale).
    pub ids: Vec<Option<usize>>,
}

pub(crate) fn build_tracks(
    map: &PolynomialMap,
    snaps: &[std::rc::Rc<FiberSnapshot>],
    cfg: &TraceConfig,
) -> Vec<ComponentTrack> {
    let k_last = snaps.len() - 1;
    // Consecutive matchings from each scale to the next coarser one.
    let upward: Vec<ComponentMatching> = (1..snaps.len())
        .map(|k| match_components(map, &snaps[k], &snaps[k - 1], cfg))
        .collect();
    let smallest = &snaps[k_last];
    (0..smallest.components.len())
        .map(|j| {
            let mut ids = vec![None; snaps.len()];
            ids[k_last] = Some(j);
            let mut cur = Some(j);
            for k in (1..=k_last).rev() {
                cur = cur.and_then(|c| upward[k - 1].assignment[c]);
                ids[k - 1] = cur;
            }
            ComponentTrack { ids }
        })
        .collect()
}

/// Only the smallest scales of a ray say anything about the limit at the
/// target; coarser samples sit at a fixed distance and may cross unrelated
/// atypical values.
const TAIL_WINDOW: usize = 4;

fn tail_range(scales: &[f64]) -> std::ops::Range<usize> {
    scales.len().saturating_sub(TAIL_WINDOW)..scales.len()
}

/// Splitting detector. A component of a nearby fiber whose limit set meets
/// two or more base components is a sound failure; a pass needs bijective
/// matching and singleton (or empty) limit sets at the tail scales of every
/// ray.
pub fn detect_splitting(
    session: &Session,
    approach: &ApproachSpec,
) -> (Flag, Vec<Witness>) {
    let map = session.map;
    let cfg = &session.cfg;
    let a = DVector::from_vec(approach.target.clone());
    let base = session.snapshot(&a);
    if base.tainted {
        return (Flag::Inconclusive, Vec::new());
    }
    let mut witnesses = Vec::new();
    let mut any_fail = false;
    let mut clean_pass = true;
    for dir in &approach.directions {
        let snaps: Vec<_> = approach
            .scales
            .iter()
            .map(|&s| session.snapshot(&approach.sample(dir, s)))
            .collect();
        if snaps[tail_range(&approach.scales)].iter().any(|s| s.tainted) {
            clean_pass = false;
            continue;
        }
        for k in tail_range(&approach.scales) {
            let snap = &snaps[k];
            if snap.tainted {
                clean_pass = false;
                continue;
            }
            let scale = approach.scales[k];
            for (ci, comp) in snap.components.iter().enumerate() {
                let lim = limit_set(map, &base, comp, scale, cfg);
                if lim.ambiguous {
                    clean_pass = false;
                }
                if lim.receiving.len() >= 2 {
                    any_fail = true;
                    witnesses.push(Witness {
                        kind: WitnessKind::Splitting,
                        direction: dir.as_slice().to_vec(),
                        scale,
                        component: Some(ci),
                        receiving: lim.receiving.iter().copied().collect(),
                    });
                }
            }
            let matching = match_components(map, &base, snap, cfg);
            if !matching.is_bijection {
                clean_pass = false;
            }
        }
    }
    let flag = if any_fail {
        Flag::Fail
    } else if clean_pass {
        Flag::Pass
    } else {
        Flag::Inconclusive
    };
    (flag, witnesses)
}

/// Strong splitting adds the compactness requirement: tracked ovals must not
/// converge onto unbounded components or blow up in diameter.
pub fn detect_strong_splitting(
    session: &Session,
    approach: &ApproachSpec,
) -> (Flag, Vec<Witness>) {
    let (ns, mut witnesses) = detect_splitting(session, approach);
    let map = session.map;
    let cfg = &session.cfg;
    let a = DVector::from_vec(approach.target.clone());
    let base = session.snapshot(&a);

    let mut circle_fail = false;
    let mut circle_unclear = false;
    if !base.tainted {
        for dir in &approach.directions {
            let snaps: Vec<_> = approach
                .scales
                .iter()
                .map(|&s| session.snapshot(&approach.sample(dir, s)))
                .collect();
            if snaps.iter().any(|s| s.tainted) {
                circle_unclear = true;
                continue;
            }
            let tracks = build_tracks(map, &snaps, cfg);
            for track in &tracks {
                // Diameter series over the scales where the track exists and
                // is a circle.
                let mut diameters = Vec::new();
                let mut last_circle: Option<(usize, usize)> = None;
                for (k, id) in track.ids.iter().enumerate() {
                    if let Some(c) = id {
                        let comp = &snaps[k].components[*c];
                        if comp.kind == ComponentKind::Circle {
                            diameters.push(comp.diameter());
                            last_circle = Some((k, *c));
                        }
                    }
                }
                let Some((k, c)) = last_circle else { continue };
                let comp = &snaps[k].components[c];
                let lim = limit_set(map, &base, comp, approach.scales[k], cfg);
                let hits_arc = lim
                    .receiving
                    .iter()
                    .any(|&i| base.components[i].kind == ComponentKind::Arc);
                let blows_up = diameters.len() >= 4
                    && diameters
                        .windows(2)
                        .rev()
                        .take(3)
                        .all(|w| w[1] > 2.0 * w[0])
                    && *diameters.last().unwrap() > cfg.radius / 2.0;
                if hits_arc || blows_up {
                    circle_fail = true;
                    witnesses.push(Witness {
                        kind: WitnessKind::CircleBreaking,
                        direction: dir.as_slice().to_vec(),
                        scale: approach.scales[k],
                        component: Some(c),
                        receiving: lim.receiving.iter().copied().collect(),
                    });
                }
            }
        }
    } else {
        circle_unclear = true;
    }

    let sns = match (ns, circle_fail, circle_unclear) {
        (Flag::Fail, _, _) => Flag::Fail,
        (_, true, _) => Flag::Fail,
        (Flag::Pass, false, false) => Flag::Pass,
        _ => Flag::Inconclusive,
    };
    (sns, witnesses)
}

/// Bundle of all three infinity verdicts for one target value.
#[derive(Clone, Debug)]
pub struct InfinityVerdict {
    pub nv: Flag,
    pub ns: Flag,
    pub sns: Flag,
    pub mu_series: Vec<MuSeries>,
    pub witnesses: Vec<Witness>,
}

/// Runs all three detectors over one approach specification.
pub fn diagnose_infinity(session: &Session, approach: &ApproachSpec) -> InfinityVerdict {
    let (nv, mu_series, mut witnesses) = detect_vanishing(session, approach);
    let (ns, ns_witnesses) = detect_splitting(session, approach);
    let (sns, sns_witnesses) = detect_strong_splitting(session, approach);
    witnesses.extend(ns_witnesses);
    // Keep only circle evidence from the strong pass; splitting witnesses are
    // already present.
    witnesses.extend(
        sns_witnesses
            .into_iter()
            .filter(|w| w.kind == WitnessKind::CircleBreaking),
    );
    // Structural implication: strong non-splitting subsumes non-splitting.
    let sns = match (sns, ns) {
        (Flag::Pass, Flag::Fail) => Flag::Fail,
        (Flag::Pass, Flag::Inconclusive) => Flag::Inconclusive,
        (s, _) => s,
    };
    InfinityVerdict {
        nv,
        ns,
        sns,
        mu_series,
        witnesses,
    }
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

    fn session_for(map: &PolynomialMap) -> Session<'_> {
        Session::new(map, TraceConfig::for_dimension(2))
    }

    fn approach_1d(a: f64) -> ApproachSpec {
        ApproachSpec::default_for(&[a], 0)
    }

    #[test]
    fn default_approach_dedups_directions_in_1d() {
        let ap = approach_1d(0.0);
        assert_eq!(ap.directions.len(), 2);
        assert_eq!(ap.scales.len(), 7);
        ap.validate().unwrap();
    }

    #[test]
    fn matching_is_bijective_for_trivial_fibration() {
        let g = map2("y*(x^2+1)");
        let s = session_for(&g);
        let base = s.snapshot(&t1(0.0));
        let other = s.snapshot(&t1(0.25));
        let m = match_components(&g, &base, &other, &s.cfg);
        assert!(m.is_bijection);
        assert_eq!(m.assignment, vec![Some(0)]);
    }

    #[test]
    fn matching_is_bijective_away_from_atypical_value() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let base = s.snapshot(&t1(0.5));
        let other = s.snapshot(&t1(0.4));
        let m = match_components(&f, &base, &other, &s.cfg);
        assert!(m.is_bijection);
        // The half-plane side of each component is preserved.
        for (j, a) in m.assignment.iter().enumerate() {
            let side_base = base.components[j].min_norm_point[0] > 0.0;
            let side_other = other.components[a.unwrap()].min_norm_point[0] > 0.0;
            assert_eq!(side_base, side_other);
        }
    }

    #[test]
    fn matching_collapses_at_atypical_value() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let base = s.snapshot(&t1(0.0));
        let other = s.snapshot(&t1(0.1));
        assert_eq!(base.components.len(), 3);
        assert_eq!(other.components.len(), 2);
        let m = match_components(&f, &base, &other, &s.cfg);
        assert!(!m.is_bijection);
        // The line x=0 and the right-hand hyperbola branch land on the same
        // component of the nearby fiber.
        let targets: Vec<Option<usize>> = m.assignment.clone();
        let mut seen = std::collections::HashMap::new();
        let mut collided = false;
        for t in targets.into_iter().flatten() {
            if seen.insert(t, ()).is_some() {
                collided = true;
            }
        }
        assert!(collided, "expected two base components to share a target");
    }

    #[test]
    fn limit_set_detects_splitting_track() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let base = s.snapshot(&t1(0.0));
        let near = s.snapshot(&t1(0.05));
        // The connected right-hand component of the nearby fiber must limit
        // onto both the line x=0 and the right hyperbola branch.
        let right = near
            .components
            .iter()
            .position(|c| c.min_norm_point[0] > 0.0)
            .unwrap();
        let lim = limit_set(&f, &base, &near.components[right], 0.05, &s.cfg);
        assert_eq!(lim.receiving.len(), 2, "receiving: {:?}", lim.receiving);
    }

    #[test]
    fn limit_set_single_for_trivial_fibration() {
        let g = map2("y*(x^2+1)");
        let s = session_for(&g);
        let base = s.snapshot(&t1(0.0));
        let near = s.snapshot(&t1(0.0625));
        let lim = limit_set(&g, &base, &near.components[0], 0.0625, &s.cfg);
        assert_eq!(lim.receiving.len(), 1);
        assert!(!lim.ambiguous);
    }

    #[test]
    fn limit_set_empty_for_escaping_component() {
        let f = map2("(x*y - 1)^2 + y^2");
        let s = session_for(&f);
        let base = s.snapshot(&t1(0.0));
        assert!(base.is_empty());
        let near = s.snapshot(&t1(0.01));
        assert!(!near.is_empty());
        for comp in &near.components {
            let lim = limit_set(&f, &base, comp, 0.01, &s.cfg);
            assert!(lim.empty);
        }
    }

    #[test]
    fn vanishing_passes_for_bounded_families() {
        let line = map2("x");
        let s = session_for(&line);
        let (flag, series, _) = detect_vanishing(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Pass);
        for ms in &series {
            for v in &ms.values {
                assert!(*v <= 0.51, "mu {v}");
            }
        }

        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let (flag, _, _) = detect_vanishing(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Pass);
    }

    #[test]
    fn vanishing_fails_with_sqrt_two_ratio() {
        let f = map2("(x*y - 1)^2 + y^2");
        let mut cfg = TraceConfig::for_dimension(2);
        cfg = cfg.with_radius(20.0);
        let s = Session::new(&f, cfg);
        let (flag, series, witnesses) = detect_vanishing(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Fail);
        assert!(!witnesses.is_empty());
        // Along the positive ray the ratio between consecutive mu values
        // tends to sqrt(2).
        let pos = series.iter().find(|m| m.direction == vec![1.0]).unwrap();
        let vals: Vec<f64> = pos.values.iter().copied().filter(|v| v.is_finite()).collect();
        let k = vals.len();
        assert!(k >= 4, "series too short: {vals:?}");
        for w in vals[k - 4..].windows(2) {
            let ratio = w[1] / w[0];
            assert!(
                (1.2..=1.7).contains(&ratio),
                "ratio {ratio} out of range in {vals:?}"
            );
        }
    }

    #[test]
    fn splitting_fails_at_atypical_value_with_witness() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let (flag, witnesses) = detect_splitting(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Fail);
        let w = witnesses
            .iter()
            .find(|w| w.kind == WitnessKind::Splitting)
            .expect("splitting witness");
        assert_eq!(w.receiving.len(), 2);
    }

    #[test]
    fn splitting_passes_for_trivial_fibration() {
        let g = map2("y*(x^2+1)");
        let s = session_for(&g);
        let (flag, witnesses) = detect_splitting(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Pass, "witnesses: {witnesses:?}");
    }

    #[test]
    fn splitting_passes_away_from_atypical_value() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let (flag, _) = detect_splitting(&s, &approach_1d(0.5));
        assert_eq!(flag, Flag::Pass);
    }

    #[test]
    fn strong_splitting_passes_for_concentric_circles() {
        let f = map2("x^2 + y^2");
        let s = session_for(&f);
        let (flag, _) = detect_strong_splitting(&s, &approach_1d(1.0));
        assert_eq!(flag, Flag::Pass);
    }

    #[test]
    fn strong_splitting_inherits_ns_failure() {
        let f = map2("x + x^2*y");
        let s = session_for(&f);
        let v = diagnose_infinity(&s, &approach_1d(0.0));
        assert_eq!(v.ns, Flag::Fail);
        assert_eq!(v.sns, Flag::Fail);
    }

    #[test]
    fn strong_splitting_passes_for_graph_family() {
        let g = map2("y*(x^2+1)");
        let s = session_for(&g);
        let (flag, _) = detect_strong_splitting(&s, &approach_1d(0.0));
        assert_eq!(flag, Flag::Pass);
    }

    #[test]
    fn verdicts_are_deterministic() {
        let f = map2("x + x^2*y");
        let run = || {
            let s = session_for(&f);
            let v = diagnose_infinity(&s, &ApproachSpec::default_for(&[0.0], 42));
            format!("{v:?}")
        };
        assert_eq!(run(), run());
    }
}
