//! Milnor set tracing, asymptotic value estimation and the intersection
//! parity test for planar maps.
//!
//! The Milnor set of `(f, distance-to-c)` is the curve where fibers of `f`
//! are tangent to spheres centred at `c`; its defining polynomial is the
//! determinant built in [`crate::poly::PolynomialMap::milnor_polynomial`].
//! Finite limits of `f` along the unbounded branches of that curve are the
//! distance-nonregular values at infinity: candidates for atypical behaviour.
//!
//! The parity test refines this: at a candidate `a` one follows, along an
//! approach ray, the intersection points of each fiber component with the
//! Milnor curve. Intersections that converge somewhere finite come in
//! cancelling pairs for the limit count; what matters is the parity of the
//! intersections that escape to infinity riding a component. An odd escaping
//! count on some component track, together with `a` being an estimated
//! asymptotic value, flags a bifurcation.

use nalgebra::DVector;
use thiserror::Error;

use crate::asymptotics::{build_tracks, ApproachSpec};
use crate::newton::{fiber_tangent, solve_square};
use crate::poly::{CompiledPoly, Polynomial, PolynomialMap};
use crate::session::Session;
use crate::trace::{enumerate_fiber, ComponentKind, FiberComponent, TraceConfig};

#[derive(Debug, Error)]
pub enum MilnorError {
    #[error("milnor set tracing requires a planar map (2 variables), got {0}")]
    NotPlanar(usize),
    #[error("degenerate centre: {0}")]
    Degenerate(String),
    #[error("all sampled centres were degenerate")]
    AllCentersDegenerate,
}

/// Traced Milnor set of one centre, inside the working ball.
#[derive(Clone, Debug)]
pub struct MilnorSet {
    pub center: Vec<f64>,
    pub determinant: Polynomial,
    pub branches: Vec<FiberComponent>,
    pub degenerate: bool,
}

/// Traces the branches of the Milnor curve `{m_c = 0}` inside the working
/// ball. Fails when the determinant vanishes identically or its gradient dies
/// on a branch — the centre is then outside the good (open dense) set and the
/// caller should retry with a perturbed centre.
pub fn trace_milnor_set(
    map: &PolynomialMap,
    center: &[f64],
    cfg: &TraceConfig,
) -> Result<MilnorSet, MilnorError> {
    if map.domain_dim() != 2 {
        return Err(MilnorError::NotPlanar(map.domain_dim()));
    }
    let det = map.milnor_polynomial(center);
    if det.is_zero() {
        return Err(MilnorError::Degenerate(
            "determinant vanishes identically".into(),
        ));
    }
    let milnor_map =
        PolynomialMap::from_polynomial(det.clone()).expect("planar determinant map");
    let snap = enumerate_fiber(&milnor_map, &DVector::from_vec(vec![0.0]), cfg);
    if snap.components.iter().any(|c| c.tainted) {
        return Err(MilnorError::Degenerate(
            "gradient of the determinant vanishes on a branch".into(),
        ));
    }
    Ok(MilnorSet {
        center: center.to_vec(),
        determinant: det,
        branches: snap.components,
        degenerate: false,
    })
}

/// Milnor data shared across many parameter values: the working-ball trace
/// plus branches extended far outward for asymptotic analysis.
pub struct MilnorContext {
    pub set: MilnorSet,
    pub milnor_map: PolynomialMap,
    pub milnor_compiled: CompiledPoly,
    pub milnor_grad: Vec<CompiledPoly>,
    /// Branch polylines traced in the extended ball.
    pub extended: Vec<FiberComponent>,
    pub extended_radius: f64,
}

impl MilnorContext {
    /// Traces the Milnor set at the working radius and again in a ball
    /// `32 x` larger, which is where escaping fiber intersections and
    /// asymptotic values are read off.
    pub fn prepare(
        map: &PolynomialMap,
        center: &[f64],
        cfg: &TraceConfig,
    ) -> Result<Self, MilnorError> {
        let set = trace_milnor_set(map, center, cfg)?;
        let milnor_map = PolynomialMap::from_polynomial(set.determinant.clone())
            .expect("planar determinant map");
        let extended_radius = 32.0 * cfg.radius;
        let big = cfg.with_radius(extended_radius);
        let ext = enumerate_fiber(&milnor_map, &DVector::from_vec(vec![0.0]), &big);
        let det = &set.determinant;
        let milnor_compiled = det.compile();
        let milnor_grad = (0..2).map(|j| det.diff(j).compile()).collect();
        Ok(MilnorContext {
            set,
            milnor_map,
            milnor_compiled,
            milnor_grad,
            extended: ext.components,
            extended_radius,
        })
    }
}

/// One estimated asymptotic value with its provenance.
#[derive(Clone, Debug)]
pub struct AsymptoticValue {
    pub value: f64,
    /// Index into the extended branch list.
    pub branch: usize,
    /// Extrapolation residual; the distance from the last sample to the
    /// reported limit is of this order.
    pub confidence: f64,
    /// Last three map values along the branch, innermost first.
    pub trail: Vec<f64>,
}

/// Estimated distance-nonregular values at infinity for one centre.
#[derive(Clone, Debug)]
pub struct AsymptoticValueEstimate {
    pub center: Vec<f64>,
    pub values: Vec<AsymptoticValue>,
    pub radii_used: Vec<f64>,
    /// Branch ends whose map values neither converged nor diverged.
    pub oscillating: Vec<usize>,
}

impl AsymptoticValueEstimate {
    /// Deduplicated value list.
    pub fn value_list(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for v in &self.values {
            if out.iter().all(|w| (w - v.value).abs() > tol) {
                out.push(v.value);
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    pub fn contains(&self, t: f64, tol: f64) -> bool {
        self.values.iter().any(|v| (v.value - t).abs() <= tol)
    }
}

/// Walks a branch end inward from its endpoint and reads the map value at the
/// last crossing of each ladder sphere, polished by Newton on the
/// curve-sphere system.
fn end_values(
    map: &PolynomialMap,
    ctx: &MilnorContext,
    points: &[DVector<f64>],
    ladder: &[f64],
    cfg: &TraceConfig,
) -> Vec<(f64, f64, DVector<f64>)> {
    // Iterate from the outer endpoint inward; ladder descending.
    let mut out = Vec::new();
    let mut rung_iter = ladder.iter().rev().peekable();
    let zero = DVector::from_vec(vec![0.0]);
    let mut prev = &points[points.len() - 1];
    for p in points.iter().rev().skip(1) {
        while let Some(&&r) = rung_iter.peek() {
            let (lo, hi) = (p.norm().min(prev.norm()), p.norm().max(prev.norm()));
            if r > hi {
                // Endpoint never reached this rung (short branch).
                rung_iter.next();
                continue;
            }
            if r < lo {
                break;
            }
            let mid = (p + prev) * 0.5;
            if let Some(x) = crate::trace::solve_on_sphere(
                &ctx.milnor_map,
                &zero,
                r,
                &mid,
                cfg.newton_tol,
                cfg.newton_max_iter,
            ) {
                if (x.norm() - r).abs() <= 1e-6 * r {
                    out.push((r, map.evaluate(&x)[0], x));
                }
            }
            rung_iter.next();
        }
        prev = p;
    }
    out.reverse(); // innermost first
    out
}

/// Follows every unbounded branch of the Milnor curve outward through the
/// radius ladder and extrapolates the map values that converge. Diverging
/// ends contribute nothing; oscillating ends are flagged.
pub fn estimate_asymptotic_values(
    map: &PolynomialMap,
    ctx: &MilnorContext,
    ladder: &[f64],
    cfg: &TraceConfig,
) -> AsymptoticValueEstimate {
    let mut values = Vec::new();
    let mut oscillating = Vec::new();
    for (bi, branch) in ctx.extended.iter().enumerate() {
        if branch.kind == ComponentKind::Circle || branch.points.len() < 3 {
            continue;
        }
        let fwd = end_values(map, ctx, &branch.points, ladder, cfg);
        let mut rev_pts = branch.points.clone();
        rev_pts.reverse();
        let bwd = end_values(map, ctx, &rev_pts, ladder, cfg);
        for samples in [fwd, bwd] {
            if samples.len() < 3 {
                continue;
            }
            let f: Vec<f64> = samples.iter().map(|(_, v, _)| *v).collect();
            let diffs: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
            let k = diffs.len();
            let shrinking = diffs
                .windows(2)
                .rev()
                .take(2)
                .all(|w| w[1].abs() <= 0.6 * w[0].abs() + 1e-12);
            let growing = diffs[k - 1].abs() > 1.5 * diffs[k.saturating_sub(2)].abs()
                || f.last().unwrap().abs() > 1e3;
            if shrinking {
                let d_last = diffs[k - 1];
                let d_prev = diffs[k - 2];
                let q = if d_prev.abs() > 1e-300 { d_last / d_prev } else { 0.0 };
                let corr = if (1.0 - q).abs() > 1e-9 { d_last * q / (1.0 - q) } else { 0.0 };
                let value = f[f.len() - 1] + corr;
                let confidence = corr.abs().max(d_last.abs() * 0.1);
                let trail = f[f.len() - 3..].to_vec();
                values.push(AsymptoticValue {
                    value,
                    branch: bi,
                    confidence,
                    trail,
                });
            } else if !growing {
                oscillating.push(bi);
            }
        }
    }
    AsymptoticValueEstimate {
        center: ctx.set.center.clone(),
        values,
        radii_used: ladder.to_vec(),
        oscillating,
    }
}

/// Default outward ladder for asymptotic value estimation.
pub fn asymptotic_ladder(radius: f64) -> Vec<f64> {
    vec![radius, 2.0 * radius, 4.0 * radius, 8.0 * radius, 16.0 * radius]
}

/// Matching tolerance when intersecting per-centre value sets.
pub const S_VALUE_MATCH_TOL: f64 = 1e-2;

/// Intersection of the per-centre asymptotic value estimates: a finite
/// over-approximation of the all-centres intersection. Degenerate centres are
/// dropped.
pub fn estimate_s_infinity(
    map: &PolynomialMap,
    centers: &[Vec<f64>],
    cfg: &TraceConfig,
) -> Result<Vec<f64>, MilnorError> {
    let mut per_center: Vec<Vec<f64>> = Vec::new();
    for c in centers {
        match MilnorContext::prepare(map, c, cfg) {
            Ok(ctx) => {
                let est = estimate_asymptotic_values(map, &ctx, &asymptotic_ladder(cfg.radius), cfg);
                per_center.push(est.value_list(S_VALUE_MATCH_TOL));
            }
            Err(MilnorError::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if per_center.is_empty() {
        return Err(MilnorError::AllCentersDegenerate);
    }
    let mut out: Vec<f64> = per_center[0].clone();
    for other in &per_center[1..] {
        out.retain(|v| other.iter().any(|w| (w - v).abs() <= S_VALUE_MATCH_TOL));
    }
    Ok(out)
}

/// Default centre list: the origin plus four random points in `[-3, 3]^2`.
pub fn default_centers(seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xce17e125);
    let mut out = vec![vec![0.0, 0.0]];
    for _ in 0..4 {
        out.push(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityVerdict {
    Bifurcation,
    Typical,
    Inconclusive,
}

/// Parity evidence for one component track along one approach direction.
#[derive(Clone, Debug)]
pub struct ParityTrack {
    pub direction: f64,
    /// Escaping-intersection parity per scale; `None` where the scale was
    /// skipped or the evidence was unclear.
    pub parities: Vec<Option<u8>>,
    pub stabilized: bool,
    pub stable_parity: Option<u8>,
    /// A point on the tracked component at the finest scale it exists.
    pub witness_point: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ParityReport {
    pub center: Vec<f64>,
    pub target: f64,
    /// The target is among the estimated asymptotic values of this centre.
    pub in_s_c: bool,
    pub s_c_values: Vec<f64>,
    pub tracks: Vec<ParityTrack>,
    pub verdict: ParityVerdict,
}

#[derive(Clone, Copy, PartialEq)]
enum CrossingClass {
    Bounded,
    Escaping,
    Unclear,
}

struct CrossingTrack {
    /// Refined crossing point per scale, while alive.
    positions: Vec<Option<DVector<f64>>>,
    /// Component-track id per scale, while assigned.
    component: Vec<Option<usize>>,
    escaped_at: Option<usize>,
    class: CrossingClass,
}

/// All transversal intersections of the fiber over `t` with the extended
/// Milnor branches, by sign scan along the branch polylines plus Newton
/// refinement. Returns `None` when a near-tangential crossing poisons the
/// scale.
fn crossings_at(
    map: &PolynomialMap,
    ctx: &MilnorContext,
    t: f64,
    cfg: &TraceConfig,
) -> Option<Vec<DVector<f64>>> {
    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut tangential = false;
    for branch in &ctx.extended {
        for w in branch.points.windows(2) {
            let fa = map.evaluate(&w[0])[0] - t;
            let fb = map.evaluate(&w[1])[0] - t;
            if fa == 0.0 || fa * fb < 0.0 {
                let mid = (&w[0] + &w[1]) * 0.5;
                if let Some(x) = refine_crossing(map, ctx, t, &mid, cfg) {
                    match crossing_angle(map, ctx, &x) {
                        Some(angle) if angle < 1e-3 => tangential = true,
                        Some(_) => push_crossing(&mut found, x),
                        None => {}
                    }
                }
            }
        }
    }
    if tangential {
        None
    } else {
        Some(found)
    }
}

fn push_crossing(found: &mut Vec<DVector<f64>>, x: DVector<f64>) {
    let tol = 1e-5 * (1.0 + x.norm());
    if found.iter().all(|p| (p - &x).norm() > tol) {
        found.push(x);
        found.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
    }
}

/// Newton on the fiber-curve intersection system `{f = t, m_c = 0}`.
fn refine_crossing(
    map: &PolynomialMap,
    ctx: &MilnorContext,
    t: f64,
    x0: &DVector<f64>,
    cfg: &TraceConfig,
) -> Option<DVector<f64>> {
    let f = |x: &DVector<f64>| {
        DVector::from_vec(vec![
            map.evaluate(x)[0] - t,
            ctx.milnor_compiled.eval(x.as_slice()),
        ])
    };
    let j = |x: &DVector<f64>| {
        let jf = map.jacobian_matrix(x);
        nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[
                jf[(0, 0)],
                jf[(0, 1)],
                ctx.milnor_grad[0].eval(x.as_slice()),
                ctx.milnor_grad[1].eval(x.as_slice()),
            ],
        )
    };
    let tol = cfg
        .newton_tol
        .max(map.noise_floor(x0))
        .max(ctx.milnor_compiled.noise_floor(x0.as_slice()));
    solve_square(f, j, x0, tol, cfg.newton_max_iter).map(|o| o.point)
}

/// Angle between the fiber and the Milnor curve at a common point.
fn crossing_angle(map: &PolynomialMap, ctx: &MilnorContext, x: &DVector<f64>) -> Option<f64> {
    let jf = map.jacobian_matrix(x);
    let (tf, _) = fiber_tangent(&jf)?;
    let jm = ctx.milnor_map.jacobian_matrix(x);
    let (tm, _) = fiber_tangent(&jm)?;
    let cross = (tf[0] * tm[1] - tf[1] * tm[0]).abs();
    Some(cross.asin())
}

/// Continues a crossing from parameter `t_from` to `t_to` in geometric
/// substeps.
fn continue_crossing(
    map: &PolynomialMap,
    ctx: &MilnorContext,
    x: &DVector<f64>,
    t_from: f64,
    t_to: f64,
    cfg: &TraceConfig,
    substeps: usize,
) -> Option<DVector<f64>> {
    let mut cur = x.clone();
    for i in 1..=substeps {
        let s = i as f64 / substeps as f64;
        // Geometric interpolation of the offset from the shared target.
        let t = t_from + (t_to - t_from) * s;
        cur = refine_crossing(map, ctx, t, &cur, cfg)?;
    }
    Some(cur)
}

/// Intersection-parity test at a candidate value.
///
/// Per approach ray and scale, every transversal fiber-Milnor intersection is
/// located, matched across scales by parameter continuation, classified as
/// bounded or escaping by its norm history, and attributed to a component
/// track. The per-track parity counts escaping intersections only (an
/// intersection that leaves the extended region stays counted); bounded ones
/// converge to interior intersections of the limit fiber and cancel out of
/// the limit count. Bifurcation requires the target to sit among the
/// estimated asymptotic values and some track to hold a stabilized odd
/// parity.
pub fn parity_test(
    session: &Session,
    ctx: &MilnorContext,
    a: f64,
    approach: &ApproachSpec,
) -> ParityReport {
    let map = session.map;
    let cfg = &session.cfg;
    let est = estimate_asymptotic_values(map, ctx, &asymptotic_ladder(cfg.radius), cfg);
    let s_c_values = est.value_list(S_VALUE_MATCH_TOL);
    let in_s_c = est.contains(a, S_VALUE_MATCH_TOL);

    let mut tracks_out: Vec<ParityTrack> = Vec::new();
    let mut any_unstable = false;

    for dir in &approach.directions {
        let d = dir[0];
        let scales = &approach.scales;
        let n_scales = scales.len();

        // Crossing discovery per scale (sign scan), then track building by
        // continuation with births.
        let mut per_scale: Vec<Option<Vec<DVector<f64>>>> = Vec::new();
        for &s in scales {
            per_scale.push(crossings_at(map, ctx, a + d * s, cfg));
        }

        let mut xtracks: Vec<CrossingTrack> = Vec::new();
        for k in 0..n_scales {
            let Some(cross_k) = per_scale[k].clone() else { continue };
            let mut claimed = vec![false; cross_k.len()];
            // Continue live tracks into this scale.
            let t_to = a + d * scales[k];
            for tr in &mut xtracks {
                if tr.escaped_at.is_some() {
                    continue;
                }
                let Some(prev_k) = (0..k).rev().find(|&i| tr.positions[i].is_some()) else {
                    continue;
                };
                if prev_k + 1 != k && per_scale[prev_k + 1..k].iter().any(|c| c.is_some()) {
                    // Track already failed to continue into an intermediate
                    // live scale; leave it dead.
                    continue;
                }
                let t_from = a + d * scales[prev_k];
                let prev = tr.positions[prev_k].clone().unwrap();
                let cont = continue_crossing(map, ctx, &prev, t_from, t_to, cfg, 4)
                    .or_else(|| continue_crossing(map, ctx, &prev, t_from, t_to, cfg, 12));
                match cont {
                    Some(x) if x.norm() <= 0.9 * ctx.extended_radius => {
                        // Snap to a discovered crossing when one is close.
                        let tol = 1e-4 * (1.0 + x.norm());
                        if let Some((i, _)) = cross_k
                            .iter()
                            .enumerate()
                            .find(|(_, c)| (*c - &x).norm() <= tol)
                        {
                            claimed[i] = true;
                        }
                        tr.positions[k] = Some(x);
                    }
                    Some(_) => tr.escaped_at = Some(k),
                    None => {
                        let grew = norm_tail_increasing(tr);
                        if grew {
                            tr.escaped_at = Some(k);
                        }
                        // Otherwise the track just dies; classification will
                        // mark it unclear if it never settled.
                    }
                }
            }
            // Births: unclaimed crossings start new tracks.
            for (i, c) in cross_k.iter().enumerate() {
                if claimed[i] {
                    continue;
                }
                let already = xtracks.iter().any(|tr| {
                    tr.positions[k]
                        .as_ref()
                        .is_some_and(|p| (p - c).norm() <= 1e-4 * (1.0 + c.norm()))
                });
                if already {
                    continue;
                }
                let mut tr = CrossingTrack {
                    positions: vec![None; n_scales],
                    component: vec![None; n_scales],
                    escaped_at: None,
                    class: CrossingClass::Unclear,
                };
                tr.positions[k] = Some(c.clone());
                xtracks.push(tr);
            }
        }

        // Classify each crossing track by its norm history.
        for tr in &mut xtracks {
            let norms: Vec<f64> = tr
                .positions
                .iter()
                .flatten()
                .map(nalgebra::DVector::norm)
                .collect();
            tr.class = classify_norm_history(&norms, tr.escaped_at.is_some(), cfg.radius);
        }

        // Fiber snapshots per scale, sized to contain nearby crossings but
        // capped: far fiber folds have curvature beyond any tracer step, and
        // a crossing out there keeps the component it rode at coarser scales
        // anyway.
        let assign_cap = 4.0 * cfg.radius;
        let mut snaps = Vec::with_capacity(n_scales);
        for (k, &s) in scales.iter().enumerate() {
            let t = approach.sample(dir, s);
            let max_norm = xtracks
                .iter()
                .filter_map(|tr| tr.positions[k].as_ref())
                .map(|p| p.norm())
                .fold(0.0f64, f64::max);
            let radius = (1.3 * max_norm).clamp(cfg.radius, assign_cap);
            let scfg = cfg.with_radius(radius);
            snaps.push(session.snapshot_with(&t, &scfg));
        }
        let ctracks = build_tracks(map, &snaps, cfg);

        // Attribute each live crossing inside the snapshot ball to the
        // component track owning its component at that scale.
        for tr in &mut xtracks {
            for k in 0..n_scales {
                let Some(p) = tr.positions[k].clone() else { continue };
                if p.norm() > 0.95 * snaps[k].radius {
                    continue;
                }
                let comp = snaps[k].component_containing(map, &p, cfg);
                tr.component[k] = comp.and_then(|c| {
                    ctracks
                        .iter()
                        .position(|ct| ct.ids[k] == Some(c))
                });
            }
        }

        // Parity per component track and scale. A crossing outside the
        // assignment ball (or escaped entirely) counts toward the component
        // track it was last seen on.
        let eff_component = |tr: &CrossingTrack, k: usize| -> Option<usize> {
            tr.component[..=k].iter().rev().flatten().copied().next()
        };
        for (ti, _ct) in ctracks.iter().enumerate() {
            let mut parities: Vec<Option<u8>> = Vec::with_capacity(n_scales);
            for k in 0..n_scales {
                if per_scale[k].is_none() {
                    parities.push(None); // tangential: scale skipped
                    continue;
                }
                let mut count = 0usize;
                let mut unclear = false;
                for tr in &xtracks {
                    let relevant = tr.positions[k].is_some()
                        || tr.escaped_at.is_some_and(|e| k >= e);
                    if !relevant {
                        continue;
                    }
                    match eff_component(tr, k) {
                        Some(c) if c == ti => match tr.class {
                            CrossingClass::Escaping => count += 1,
                            CrossingClass::Bounded => {}
                            CrossingClass::Unclear => unclear = true,
                        },
                        Some(_) => {}
                        // Never attributed anywhere: poisons every track.
                        None => unclear = true,
                    }
                }
                parities.push(if unclear { None } else { Some((count % 2) as u8) });
            }
            let defined: Vec<u8> = parities.iter().rev().flatten().copied().collect();
            let stabilized = defined.len() >= 3 && defined[..3].iter().all(|p| *p == defined[0]);
            if !stabilized {
                any_unstable = true;
            }
            let witness_point = (0..n_scales)
                .rev()
                .find_map(|k| _ct.ids[k].map(|c| (k, c)))
                .map(|(k, c)| snaps[k].components[c].min_norm_point.as_slice().to_vec());
            tracks_out.push(ParityTrack {
                direction: d,
                parities: parities.clone(),
                stabilized,
                stable_parity: stabilized.then(|| defined[0]),
                witness_point,
            });
        }
    }

    let some_odd = tracks_out
        .iter()
        .any(|t| t.stabilized && t.stable_parity == Some(1));
    let all_even = tracks_out
        .iter()
        .all(|t| t.stabilized && t.stable_parity == Some(0));
    let verdict = if !in_s_c {
        ParityVerdict::Typical
    } else if some_odd {
        ParityVerdict::Bifurcation
    } else if all_even && !tracks_out.is_empty() {
        ParityVerdict::Typical
    } else if any_unstable || tracks_out.is_empty() {
        ParityVerdict::Inconclusive
    } else {
        ParityVerdict::Typical
    };

    ParityReport {
        center: ctx.set.center.clone(),
        target: a,
        in_s_c,
        s_c_values,
        tracks: tracks_out,
        verdict,
    }
}

fn norm_tail_increasing(tr: &CrossingTrack) -> bool {
    let norms: Vec<f64> = tr
        .positions
        .iter()
        .flatten()
        .map(nalgebra::DVector::norm)
        .collect();
    norms.len() >= 2 && norms.windows(2).rev().take(2).all(|w| w[1] > w[0])
}

fn classify_norm_history(norms: &[f64], escaped: bool, radius: f64) -> CrossingClass {
    if escaped {
        return CrossingClass::Escaping;
    }
    if norms.is_empty() {
        return CrossingClass::Unclear;
    }
    let last = *norms.last().unwrap();
    if norms.len() >= 3 {
        let tail = &norms[norms.len() - 3..];
        let increasing = tail.windows(2).all(|w| w[1] > 1.15 * w[0]);
        if increasing && last > radius / 2.0 {
            return CrossingClass::Escaping;
        }
    }
    if last <= radius {
        if norms.len() >= 3 {
            let d1 = (norms[norms.len() - 1] - norms[norms.len() - 2]).abs();
            let d0 = (norms[norms.len() - 2] - norms[norms.len() - 3]).abs();
            if d1 <= 0.8 * d0 + 1e-9 || d1 <= 0.1 * (1.0 + last) {
                return CrossingClass::Bounded;
            }
        } else {
            return CrossingClass::Bounded;
        }
    }
    CrossingClass::Unclear
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map2(text: &str) -> PolynomialMap {
        PolynomialMap::parse(text, &["x", "y"]).unwrap()
    }

    fn cfg2() -> TraceConfig {
        TraceConfig::for_dimension(2)
    }

    #[test]
    fn milnor_set_of_projection_is_horizontal_axis() {
        let f = map2("x");
        let ms = trace_milnor_set(&f, &[0.0, 0.0], &cfg2()).unwrap();
        assert_eq!(ms.branches.len(), 1);
        assert_eq!(ms.branches[0].kind, ComponentKind::Arc);
        for p in &ms.branches[0].points {
            assert!(p[1].abs() <= 1e-8, "point off the axis: {p:?}");
        }
    }

    #[test]
    fn milnor_branch_points_satisfy_determinant() {
        let f = map2("x + x^2*y");
        let cfg = cfg2();
        let ms = trace_milnor_set(&f, &[0.0, 0.0], &cfg).unwrap();
        assert!(!ms.branches.is_empty());
        let det = ms.determinant.compile();
        for b in &ms.branches {
            for p in &b.points {
                assert!(det.eval(p.as_slice()).abs() <= 10.0 * cfg.newton_tol);
            }
        }
    }

    #[test]
    fn asymptotic_values_contain_zero_for_cancelling_example() {
        let f = map2("y*(2*x^2*y^2 - 9*x*y + 12)");
        let cfg = cfg2();
        let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &cfg).unwrap();
        let est = estimate_asymptotic_values(&f, &ctx, &asymptotic_ladder(cfg.radius), &cfg);
        assert!(
            est.values.iter().any(|v| v.value.abs() <= 1e-3),
            "values: {:?}",
            est.value_list(1e-3)
        );
        // Differences along each emitted trail must shrink.
        for v in &est.values {
            let d1 = (v.trail[1] - v.trail[0]).abs();
            let d2 = (v.trail[2] - v.trail[1]).abs();
            assert!(d2 < d1, "trail not converging: {:?}", v.trail);
        }
    }

    #[test]
    fn asymptotic_values_empty_when_map_diverges_along_branches() {
        let cfg = cfg2();
        for text in ["y*(x^2+1)", "x"] {
            let f = map2(text);
            let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &cfg).unwrap();
            let est = estimate_asymptotic_values(&f, &ctx, &asymptotic_ladder(cfg.radius), &cfg);
            assert!(est.values.is_empty(), "{text}: {:?}", est.value_list(1e-3));
            assert!(est.oscillating.is_empty());
        }
    }

    #[test]
    fn s_infinity_empty_for_trivial_fixtures() {
        let cfg = cfg2();
        for text in ["y*(x^2+1)", "x"] {
            let f = map2(text);
            let vals = estimate_s_infinity(&f, &default_centers(1), &cfg).unwrap();
            assert!(vals.is_empty(), "{text}: {vals:?}");
        }
    }

    #[test]
    fn s_zero_membership_for_splitting_example() {
        // The atypical value 0 of x + x^2*y is seen from the origin centre.
        let f = map2("x + x^2*y");
        let cfg = cfg2();
        let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &cfg).unwrap();
        let est = estimate_asymptotic_values(&f, &ctx, &asymptotic_ladder(cfg.radius), &cfg);
        assert!(est.contains(0.0, 1e-2), "values: {:?}", est.value_list(1e-3));
    }

    #[test]
    fn parity_even_for_cancelling_example() {
        let f = map2("y*(2*x^2*y^2 - 9*x*y + 12)");
        let session = Session::new(&f, cfg2());
        let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &session.cfg).unwrap();
        let approach = ApproachSpec::default_for(&[0.0], 0);
        let report = parity_test(&session, &ctx, 0.0, &approach);
        assert!(report.in_s_c, "S_0 should contain 0");
        for t in &report.tracks {
            assert!(t.stabilized, "track not stabilized: {t:?}");
            assert_eq!(t.stable_parity, Some(0), "odd track: {t:?}");
        }
        assert_eq!(report.verdict, ParityVerdict::Typical);
    }

    #[test]
    fn parity_odd_flags_bifurcation_for_splitting_example() {
        let f = map2("x + x^2*y");
        let session = Session::new(&f, cfg2());
        let ctx = MilnorContext::prepare(&f, &[0.0, 0.0], &session.cfg).unwrap();
        let approach = ApproachSpec::default_for(&[0.0], 0);
        let report = parity_test(&session, &ctx, 0.0, &approach);
        assert!(report.in_s_c);
        assert_eq!(report.verdict, ParityVerdict::Bifurcation);
        // The odd track rides the half-plane that splits: approaching from
        // above it is the x > 0 side.
        let odd = report
            .tracks
            .iter()
            .find(|t| t.direction > 0.0 && t.stable_parity == Some(1))
            .expect("odd track on the positive ray");
        let w = odd.witness_point.as_ref().unwrap();
        assert!(w[0] > 0.0, "witness {w:?}");
    }

    #[test]
    fn parity_irrelevant_when_target_not_asymptotic() {
        let g = map2("y*(x^2+1)");
        let session = Session::new(&g, cfg2());
        let ctx = MilnorContext::prepare(&g, &[0.0, 0.0], &session.cfg).unwrap();
        let approach = ApproachSpec::default_for(&[0.0], 0);
        let report = parity_test(&session, &ctx, 0.0, &approach);
        assert!(!report.in_s_c);
        assert_eq!(report.verdict, ParityVerdict::Typical);
    }
}
