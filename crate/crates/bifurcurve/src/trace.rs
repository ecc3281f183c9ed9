//! Fiber tracing: seed discovery and predictor–corrector continuation.
//!
//! A fiber `X_t = F^-1(t)` of a map `R^n -> R^(n-1)` is a curve at regular
//! values. Inside a working ball of radius `R` every connected piece is traced
//! as a polyline: the predictor steps along the unit tangent (the null space
//! of the Jacobian), the corrector runs Newton on `F(x) = t` restricted to the
//! hyperplane orthogonal to the tangent, and the step length adapts to
//! corrector behaviour and turning angle. A piece is a `Circle` when the trace
//! closes up and an `Arc` when both ends leave the working region.
//!
//! Seeds come from three families: solutions on the bounding sphere (every
//! arc crosses it), least-norm Newton projections of a lattice (generic
//! interior structure), and distance-critical points for a few centres (every
//! compact oval has one).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::newton::{
    self, fiber_tangent, orient_lex_positive, point_polyline_distance, point_segment_distance,
    solve_square,
};
use crate::poly::{CompiledPoly, PolynomialMap};

/// Jacobian singular values below this mark a trace as too close to the
/// critical set to be trusted.
pub const SINGULAR_TOL: f64 = 1e-6;

/// Tuning knobs for fiber tracing.
#[derive(Clone, Debug)]
pub struct TraceConfig {
    /// Radius of the working ball.
    pub radius: f64,
    /// When set, everything inside this radius is discarded: traces stop at
    /// the inner sphere and its crossings count as boundary hits.
    pub inner_radius: Option<f64>,
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
    /// Residual tolerance for every Newton solve.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Distance at which a returning trace is accepted as a closed loop.
    pub loop_close_tol: f64,
    /// Distance below which two traces are considered the same component.
    pub dedup_tol: f64,
    /// Per-axis resolution of the seed lattice.
    pub seed_grid: usize,
    /// Hard cap on polyline length; reaching it marks the trace incomplete.
    pub max_points: usize,
    /// Seed for every random choice downstream (centres, directions).
    pub seed: u64,
}

impl TraceConfig {
    /// Defaults for a map with `n` domain variables. The lattice resolution
    /// drops with dimension to keep the number of Newton starts bounded.
    pub fn for_dimension(n: usize) -> Self {
        let radius = 10.0;
        // Small enough to crawl through high-curvature folds; the adaptive
        // stepper recovers quickly afterwards.
        let step_min = radius * 1e-9;
        TraceConfig {
            radius,
            inner_radius: None,
            step_init: radius / 200.0,
            step_min,
            step_max: radius / 50.0,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            loop_close_tol: 10.0 * step_min,
            dedup_tol: 1e-6 * radius,
            seed_grid: if n <= 2 { 32 } else { 8 },
            max_points: 100_000,
            seed: 0,
        }
    }

    /// Returns a copy rescaled to a different ball radius, keeping the step
    /// sizes proportional.
    pub fn with_radius(&self, radius: f64) -> Self {
        let scale = radius / self.radius;
        TraceConfig {
            radius,
            step_init: self.step_init * scale,
            step_min: self.step_min * scale,
            step_max: self.step_max * scale,
            loop_close_tol: self.loop_close_tol * scale,
            dedup_tol: self.dedup_tol * scale,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius > 0.0) {
            return Err("radius must be positive".into());
        }
        if let Some(r0) = self.inner_radius {
            if !(r0 > 0.0 && r0 < self.radius) {
                return Err("inner radius must lie in (0, radius)".into());
            }
        }
        if !(self.step_min <= self.step_init && self.step_init <= self.step_max) {
            return Err("need step_min <= step_init <= step_max".into());
        }
        for (name, v) in [
            ("step_min", self.step_min),
            ("newton_tol", self.newton_tol),
            ("loop_close_tol", self.loop_close_tol),
            ("dedup_tol", self.dedup_tol),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.seed_grid < 2 {
            return Err("seed_grid must be at least 2".into());
        }
        Ok(())
    }
}

/// Which bounding sphere a trace endpoint lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundarySide {
    Outer,
    Inner,
}

#[derive(Clone, Debug)]
pub struct BoundaryHit {
    pub point: DVector<f64>,
    pub side: BoundarySide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentKind {
    /// Closed loop: compact component, no boundary hits.
    Circle,
    /// Open trace with both endpoints on a bounding sphere.
    Arc,
}

/// One traced connected piece of a fiber inside the working region.
#[derive(Clone, Debug)]
pub struct FiberComponent {
    pub parameter: DVector<f64>,
    pub points: Vec<DVector<f64>>,
    pub kind: ComponentKind,
    pub boundary_hits: Vec<BoundaryHit>,
    pub min_norm_point: DVector<f64>,
    pub min_norm: f64,
    /// True when the norm minimum sits at a trace endpoint, so the true
    /// infimum over the unbounded component may be smaller.
    pub min_norm_at_boundary: bool,
    pub max_residual: f64,
    /// Smallest Jacobian singular value seen along the trace.
    pub min_jacobian_sv: f64,
    /// Too close to the critical set to be trusted.
    pub tainted: bool,
    /// The trace had to stop early (step underflow or point cap).
    pub incomplete: bool,
}

impl FiberComponent {
    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
    }

    /// Axis-aligned bounding box diagonal; cheap and monotone enough for
    /// growth tests.
    pub fn diameter(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let n = self.points[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in &self.points {
            for i in 0..n {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (0..n).map(|i| (hi[i] - lo[i]).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SeedAudit {
    /// Newton runs that produced a point on the fiber.
    pub found: usize,
    /// Seeds dropped as duplicates or already covered by a traced component.
    pub merged: usize,
    /// Newton runs that failed or landed outside the working region.
    pub rejected: usize,
    /// Traces actually performed.
    pub traced: usize,
}

/// All components of one fiber inside the working region, deduplicated.
#[derive(Clone, Debug)]
pub struct FiberSnapshot {
    pub parameter: DVector<f64>,
    pub radius: f64,
    pub inner_radius: Option<f64>,
    pub components: Vec<FiberComponent>,
    pub seed_audit: SeedAudit,
    pub tainted: bool,
}

impl FiberSnapshot {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Largest over components of the smallest norm on the component; the
    /// flag reports whether any contributing minimum sat on a trace endpoint
    /// (the value is then only a lower bound).
    pub fn mu(&self) -> (f64, bool) {
        let mut mu = 0.0f64;
        let mut lower_bound = false;
        for c in &self.components {
            if c.min_norm > mu {
                mu = c.min_norm;
                lower_bound = c.min_norm_at_boundary;
            }
        }
        (mu, lower_bound)
    }

    /// Index of the component whose polyline passes through `p`, using the
    /// chord-deviation envelope test.
    pub fn component_containing(
        &self,
        map: &PolynomialMap,
        p: &DVector<f64>,
        cfg: &TraceConfig,
    ) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.components.iter().enumerate() {
            if let Some(d) = distance_if_on_component(map, &self.parameter, c, p, cfg) {
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Internal per-fiber state shared by seed search and tracing.
struct TraceContext<'a> {
    map: &'a PolynomialMap,
    target: &'a DVector<f64>,
    cfg: &'a TraceConfig,
    /// Determinant polynomial of the distance-to-origin critical system,
    /// used to polish norm minima.
    origin_milnor: CompiledPoly,
    origin_milnor_grad: Vec<CompiledPoly>,
}

impl<'a> TraceContext<'a> {
    fn new(map: &'a PolynomialMap, target: &'a DVector<f64>, cfg: &'a TraceConfig) -> Self {
        let origin = vec![0.0; map.domain_dim()];
        let m = map.milnor_polynomial(&origin);
        let grad = (0..map.domain_dim()).map(|j| m.diff(j).compile()).collect();
        TraceContext {
            map,
            target,
            cfg,
            origin_milnor: m.compile(),
            origin_milnor_grad: grad,
        }
    }

    fn in_region(&self, x: &DVector<f64>) -> bool {
        let r = x.norm();
        r <= self.cfg.radius && self.cfg.inner_radius.map_or(true, |r0| r >= r0)
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.residual(x, self.target)
    }
}

fn lattice_points(n: usize, per_axis: usize, radius: f64) -> Vec<DVector<f64>> {
    let mut pts = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let p = DVector::from_iterator(
            n,
            idx.iter()
                .map(|&i| -radius + 2.0 * radius * (i as f64 + 0.5) / per_axis as f64),
        );
        pts.push(p);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return pts;
            }
        }
    }
}

/// Unit directions obtained by projecting the seed lattice to the sphere and
/// deduplicating.
pub(crate) fn lattice_for_sphere(n: usize, per_axis: usize) -> Vec<DVector<f64>> {
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for p in lattice_points(n, per_axis, 1.0) {
        let norm = p.norm();
        if norm < 1e-9 {
            continue;
        }
        let d = p / norm;
        if dirs.iter().all(|q| (q - &d).norm() > 1e-6) {
            dirs.push(d);
        }
    }
    dirs
}

/// Solves the fiber-sphere system `{F(x) = t, |x| = r}` by Newton from `x0`.
pub(crate) fn solve_on_sphere(
    map: &PolynomialMap,
    target: &DVector<f64>,
    r: f64,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let m = map.target_dim();
    let f = |x: &DVector<f64>| {
        let v = map.residual(x, target);
        v.insert_row(m, (x.norm_squared() - r * r) / (2.0 * r))
    };
    let j = |x: &DVector<f64>| {
        let mut jm = map.jacobian_matrix(x);
        jm = jm.insert_row(m, 0.0);
        for k in 0..x.len() {
            jm[(m, k)] = x[k] / r;
        }
        jm
    };
    let tol = tol.max(map.noise_floor(x0));
    solve_square(f, j, x0, tol, max_iter).map(|o| o.point)
}

/// Solves the distance-critical system `{F(x) = t, m_c(x) = 0}` by Newton.
fn solve_distance_critical(
    map: &PolynomialMap,
    target: &DVector<f64>,
    milnor: &CompiledPoly,
    milnor_grad: &[CompiledPoly],
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let m = map.target_dim();
    let f = |x: &DVector<f64>| {
        let v = map.residual(x, target);
        v.insert_row(m, milnor.eval(x.as_slice()))
    };
    let j = |x: &DVector<f64>| {
        let mut jm = map.jacobian_matrix(x);
        jm = jm.insert_row(m, 0.0);
        for k in 0..x.len() {
            jm[(m, k)] = milnor_grad[k].eval(x.as_slice());
        }
        jm
    };
    let tol = tol
        .max(map.noise_floor(x0))
        .max(milnor.noise_floor(x0.as_slice()));
    solve_square(f, j, x0, tol, max_iter).map(|o| o.point)
}

/// Gathers points on the fiber `F^-1(t)` inside the working region.
///
/// An empty result means no component was found; completeness is heuristic
/// and audited, not certified.
pub fn find_seeds(
    map: &PolynomialMap,
    target: &DVector<f64>,
    cfg: &TraceConfig,
) -> (Vec<DVector<f64>>, SeedAudit) {
    let n = map.domain_dim();
    let mut audit = SeedAudit::default();
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    let accept_tol = 1e-6_f64.max(10.0 * cfg.newton_tol);
    let mut push = |audit: &mut SeedAudit, seeds: &mut Vec<DVector<f64>>, x: DVector<f64>| {
        if seeds.iter().any(|s| (s - &x).norm() <= accept_tol) {
            audit.merged += 1;
        } else {
            audit.found += 1;
            seeds.push(x);
        }
    };

    let lattice = lattice_points(n, cfg.seed_grid, cfg.radius);

    // (i) sphere crossings; with an inner sphere both shells are searched.
    let mut spheres = vec![cfg.radius];
    if let Some(r0) = cfg.inner_radius {
        spheres.push(r0);
    }
    for r in spheres {
        for p in &lattice {
            let norm = p.norm();
            if norm < 1e-9 {
                continue;
            }
            let start = p * (r / norm);
            match solve_on_sphere(map, target, r, &start, cfg.newton_tol, cfg.newton_max_iter) {
                Some(x) if (x.norm() - r).abs() <= 1e-6 * r.max(1.0) => {
                    push(&mut audit, &mut seeds, x)
                }
                _ => audit.rejected += 1,
            }
        }
    }

    // (ii) least-norm projection of the interior lattice.
    for p in &lattice {
        let out = newton::project_least_norm(
            |x| map.residual(x, target),
            |x| map.jacobian_matrix(x),
            p,
            cfg.newton_tol.max(map.noise_floor(p)),
            cfg.newton_max_iter,
        );
        match out {
            Some(o)
                if o.point.norm() <= cfg.radius
                    && cfg.inner_radius.map_or(true, |r0| o.point.norm() >= r0) =>
            {
                push(&mut audit, &mut seeds, o.point)
            }
            _ => audit.rejected += 1,
        }
    }

    // (iii) distance-critical points: every compact oval has one for any
    // centre, so these catch components the sphere family cannot see.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe);
    let mut centers = vec![vec![0.0; n]];
    for _ in 0..3 {
        centers.push(
            (0..n)
                .map(|_| rng.gen_range(-cfg.radius / 4.0..cfg.radius / 4.0))
                .collect(),
        );
    }
    for c in &centers {
        let m = map.milnor_polynomial(c);
        if m.is_zero() {
            continue;
        }
        let mc = m.compile();
        let grad: Vec<CompiledPoly> = (0..n).map(|j| m.diff(j).compile()).collect();
        for p in lattice.iter().step_by(2) {
            match solve_distance_critical(
                map,
                target,
                &mc,
                &grad,
                p,
                cfg.newton_tol,
                cfg.newton_max_iter,
            ) {
                Some(x)
                    if x.norm() <= cfg.radius
                        && cfg.inner_radius.map_or(true, |r0| x.norm() >= r0) =>
                {
                    push(&mut audit, &mut seeds, x)
                }
                _ => audit.rejected += 1,
            }
        }
    }

    seeds.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
    (seeds, audit)
}

enum SweepEnd {
    Closed,
    Hit(BoundaryHit),
    Dead,
}

struct Sweep {
    points: Vec<DVector<f64>>,
    end: SweepEnd,
    max_residual: f64,
    min_sv: f64,
}

fn run_corrector(
    ctx: &TraceContext,
    tangent: &DVector<f64>,
    x_pred: &DVector<f64>,
) -> Option<DVector<f64>> {
    let m = ctx.map.target_dim();
    let f = |x: &DVector<f64>| {
        let v = ctx.residual(x);
        v.insert_row(m, tangent.dot(&(x - x_pred)))
    };
    let j = |x: &DVector<f64>| {
        let mut jm = ctx.map.jacobian_matrix(x);
        jm = jm.insert_row(m, 0.0);
        for k in 0..x.len() {
            jm[(m, k)] = tangent[k];
        }
        jm
    };
    let tol = ctx.cfg.newton_tol.max(ctx.map.noise_floor(x_pred));
    solve_square(f, j, x_pred, tol, ctx.cfg.newton_max_iter).map(|o| o.point)
}

/// Finds the exact boundary crossing on the trace segment `[from, to]`, where
/// `to` has left the region through the sphere of radius `r`.
fn boundary_crossing(
    ctx: &TraceContext,
    from: &DVector<f64>,
    to: &DVector<f64>,
    r: f64,
) -> Option<DVector<f64>> {
    // Bisect the chord to bracket the sphere, then polish on the fiber-sphere
    // system.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let side = |s: f64| {
        let p = from + (to - from) * s;
        p.norm() - r
    };
    let f_lo = side(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if (side(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let start = from + (to - from) * (0.5 * (lo + hi));
    let hit = solve_on_sphere(
        ctx.map,
        ctx.target,
        r,
        &start,
        ctx.cfg.newton_tol,
        ctx.cfg.newton_max_iter,
    )?;
    let step = (to - from).norm();
    if point_segment_distance(&hit, from, to) > 2.0 * step + ctx.cfg.loop_close_tol {
        return None;
    }
    Some(hit)
}

/// Positions are only determined up to the residual tolerance divided by the
/// local gradient scale; guards tighter than this reject everything.
fn position_noise(ctx: &TraceContext, x: &DVector<f64>, sigma_min: f64) -> f64 {
    let tol = ctx.cfg.newton_tol.max(ctx.map.noise_floor(x));
    20.0 * tol / sigma_min.max(SINGULAR_TOL)
}

/// True when the midpoint of the step chord `[x, y]` projects back onto the
/// fiber within a fraction of the step length (plus positional noise).
fn chord_on_curve(
    ctx: &TraceContext,
    x: &DVector<f64>,
    y: &DVector<f64>,
    step: f64,
    allow: f64,
) -> bool {
    let mid = (x + y) * 0.5;
    let tol = ctx.cfg.newton_tol.max(ctx.map.noise_floor(&mid));
    match newton::project_least_norm(
        |p| ctx.residual(p),
        |p| ctx.map.jacobian_matrix(p),
        &mid,
        tol,
        ctx.cfg.newton_max_iter,
    ) {
        Some(o) => {
            let drift = (&o.point - &mid).norm();
            drift <= 0.15 * step + allow + 1e3 * f64::EPSILON * (1.0 + mid.norm())
        }
        None => false,
    }
}

fn sweep(ctx: &TraceContext, start: &DVector<f64>, dir: &DVector<f64>, start_sv: f64) -> Sweep {
    let cfg = ctx.cfg;
    let mut points: Vec<DVector<f64>> = Vec::new();
    let mut x = start.clone();
    let mut tangent = dir.clone();
    let mut sv_here = start_sv;
    let mut step = cfg.step_init;
    let mut arc = 0.0f64;
    let mut turning = 0.0f64;
    let mut max_residual = 0.0f64;
    let mut min_sv = f64::INFINITY;
    const MIN_TURNING_FOR_CLOSURE: f64 = 3.0;
    const MAX_TURN_PER_STEP: f64 = 0.35;

    loop {
        if points.len() >= cfg.max_points {
            return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
        }
        let x_pred = &x + &tangent * step;
        let corrected = run_corrector(ctx, &tangent, &x_pred);
        // A genuine correction is of sagitta size plus positional noise;
        // anything larger means the corrector landed on a different strand.
        let allow = position_noise(ctx, &x, sv_here);
        let y = match corrected {
            Some(y) if (&y - &x_pred).norm() <= 0.35 * step + allow => y,
            _ => {
                step *= 0.5;
                if step < cfg.step_min {
                    return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
                }
                continue;
            }
        };
        // Chord validation: the midpoint of an honest step sits within
        // sagitta distance of the curve, while a chord skipping a fold tip
        // (or hopping between close strands) leaves its midpoint stranded.
        if !chord_on_curve(ctx, &x, &y, step, allow) {
            step *= 0.5;
            if step < cfg.step_min {
                return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
            }
            continue;
        }
        let jac = ctx.map.jacobian_matrix(&y);
        let Some((t_new, sv)) = fiber_tangent(&jac) else {
            return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
        };
        // The null-space tangent comes with an arbitrary sign per call.
        let t_new = if t_new.dot(&tangent) >= 0.0 { t_new } else { -t_new };
        let turn = t_new.dot(&tangent).clamp(-1.0, 1.0).acos();
        if turn > MAX_TURN_PER_STEP && step > 2.0 * cfg.step_min {
            step *= 0.5;
            continue;
        }

        // Domain exits, outer then inner sphere.
        if y.norm() >= cfg.radius {
            if let Some(hit) = boundary_crossing(ctx, &x, &y, cfg.radius) {
                max_residual = max_residual.max(ctx.residual(&hit).amax());
                points.push(hit.clone());
                return Sweep {
                    points,
                    end: SweepEnd::Hit(BoundaryHit { point: hit, side: BoundarySide::Outer }),
                    max_residual,
                    min_sv,
                };
            }
            step *= 0.5;
            if step < cfg.step_min {
                return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
            }
            continue;
        }
        if let Some(r0) = cfg.inner_radius {
            if y.norm() <= r0 {
                if let Some(hit) = boundary_crossing(ctx, &x, &y, r0) {
                    max_residual = max_residual.max(ctx.residual(&hit).amax());
                    points.push(hit.clone());
                    return Sweep {
                        points,
                        end: SweepEnd::Hit(BoundaryHit { point: hit, side: BoundarySide::Inner }),
                        max_residual,
                        min_sv,
                    };
                }
                step *= 0.5;
                if step < cfg.step_min {
                    return Sweep { points, end: SweepEnd::Dead, max_residual, min_sv };
                }
                continue;
            }
        }

        // Loop closure: only after real turning, and only when moving in the
        // original direction again.
        if turning >= MIN_TURNING_FOR_CLOSURE && arc > 10.0 * step {
            let d = point_segment_distance(start, &x, &y);
            if d <= cfg.loop_close_tol.max(0.75 * step) && tangent.dot(dir) > 0.3 {
                points.push(start.clone());
                return Sweep { points, end: SweepEnd::Closed, max_residual, min_sv };
            }
        }

        max_residual = max_residual.max(ctx.residual(&y).amax());
        min_sv = min_sv.min(sv);
        sv_here = sv;
        arc += (&y - &x).norm();
        turning += turn;
        points.push(y.clone());
        x = y;
        tangent = t_new;
        step = (step * 1.4).min(cfg.step_max);
    }
}

/// Refines the norm minimum along a trace: exact per-segment minimisation of
/// the distance to the origin, projection of the winner back onto the fiber
/// (a chord minimum undershoots on a curved arc), then an optional Newton
/// polish on the distance-critical system.
fn refine_min_norm(ctx: &TraceContext, points: &[DVector<f64>]) -> (DVector<f64>, f64, bool) {
    // Best polyline vertex.
    let mut best_vertex_idx = 0usize;
    for (i, p) in points.iter().enumerate() {
        if p.norm() < points[best_vertex_idx].norm() {
            best_vertex_idx = i;
        }
    }
    let mut best = points[best_vertex_idx].clone();
    let mut best_norm = best.norm();

    // Best chord point, landed back on the curve.
    let mut chord_best: Option<DVector<f64>> = None;
    let mut chord_norm = f64::INFINITY;
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            continue;
        }
        let s = (-a.dot(&ab) / len2).clamp(0.0, 1.0);
        let p = a + ab * s;
        let nrm = p.norm();
        if nrm < chord_norm {
            chord_norm = nrm;
            chord_best = Some(p);
        }
    }
    if let Some(p) = chord_best {
        if let Some(o) = newton::project_least_norm(
            |x| ctx.residual(x),
            |x| ctx.map.jacobian_matrix(x),
            &p,
            ctx.cfg.newton_tol.max(ctx.map.noise_floor(&p)),
            ctx.cfg.newton_max_iter,
        ) {
            let q = o.point;
            if (&q - &p).norm() <= ctx.cfg.step_max && q.norm() < best_norm {
                best_norm = q.norm();
                best = q;
            }
        }
    }

    // Newton polish on the distance-critical system; the system is singular
    // for e.g. origin-centred circles, in which case the projected minimum
    // stands.
    if let Some(x) = solve_distance_critical(
        ctx.map,
        ctx.target,
        &ctx.origin_milnor,
        &ctx.origin_milnor_grad,
        &best,
        ctx.cfg.newton_tol,
        ctx.cfg.newton_max_iter,
    ) {
        let local = (&x - &best).norm() <= 2.0 * ctx.cfg.step_max;
        if local && x.norm() <= best_norm + ctx.cfg.dedup_tol && ctx.in_region(&x) {
            best_norm = x.norm();
            best = x;
        }
    }

    // The minimum counts as boundary-attained when nothing beat an endpoint
    // vertex by more than trace noise.
    let end_norm = points[0].norm().min(points.last().unwrap().norm());
    let at_boundary = end_norm <= best_norm + ctx.cfg.dedup_tol;
    (best, best_norm, at_boundary)
}

fn trace_with_context(ctx: &TraceContext, seed: &DVector<f64>) -> FiberComponent {
    let cfg = ctx.cfg;
    let mut tainted = false;
    let mut incomplete = false;

    // Land the seed exactly on the fiber first.
    let seed = match newton::project_least_norm(
        |x| ctx.residual(x),
        |x| ctx.map.jacobian_matrix(x),
        seed,
        cfg.newton_tol.max(ctx.map.noise_floor(seed)),
        cfg.newton_max_iter,
    ) {
        Some(o) => o.point,
        None => seed.clone(),
    };

    let jac = ctx.map.jacobian_matrix(&seed);
    let Some((t0, sv0)) = fiber_tangent(&jac) else {
        return degenerate_component(ctx, seed, true);
    };
    if sv0 < SINGULAR_TOL {
        tainted = true;
    }
    let t0 = orient_lex_positive(t0);

    let fwd = sweep(ctx, &seed, &t0, sv0);
    let mut max_residual = fwd.max_residual.max(ctx.residual(&seed).amax());
    let mut min_sv = fwd.min_sv.min(sv0);
    let mut points: Vec<DVector<f64>>;
    let mut hits: Vec<BoundaryHit> = Vec::new();
    let kind;

    match fwd.end {
        SweepEnd::Closed => {
            points = vec![seed.clone()];
            points.extend(fwd.points);
            kind = ComponentKind::Circle;
        }
        _ => {
            if let SweepEnd::Hit(h) = &fwd.end {
                hits.push(h.clone());
            } else {
                incomplete = true;
            }
            let back = sweep(ctx, &seed, &(-&t0), sv0);
            max_residual = max_residual.max(back.max_residual);
            min_sv = min_sv.min(back.min_sv);
            let back_closed = matches!(back.end, SweepEnd::Closed);
            match &back.end {
                SweepEnd::Hit(h) => hits.insert(0, h.clone()),
                SweepEnd::Closed => {}
                SweepEnd::Dead => incomplete = true,
            }
            points = back.points;
            points.reverse();
            points.push(seed.clone());
            points.extend(fwd.points);
            kind = if back_closed { ComponentKind::Circle } else { ComponentKind::Arc };
        }
    }

    if min_sv < SINGULAR_TOL {
        tainted = true;
    }
    let (mn_point, mn, mut at_boundary) = refine_min_norm(ctx, &points);
    if kind == ComponentKind::Circle {
        at_boundary = false;
    }
    FiberComponent {
        parameter: ctx.target.clone(),
        points,
        kind,
        boundary_hits: hits,
        min_norm_point: mn_point,
        min_norm: mn,
        min_norm_at_boundary: at_boundary,
        max_residual,
        min_jacobian_sv: min_sv,
        tainted,
        incomplete,
    }
}

fn degenerate_component(ctx: &TraceContext, seed: DVector<f64>, tainted: bool) -> FiberComponent {
    FiberComponent {
        parameter: ctx.target.clone(),
        min_norm: seed.norm(),
        min_norm_point: seed.clone(),
        points: vec![seed],
        kind: ComponentKind::Arc,
        boundary_hits: Vec::new(),
        min_norm_at_boundary: false,
        max_residual: 0.0,
        min_jacobian_sv: 0.0,
        tainted,
        incomplete: true,
    }
}

/// Traces the component of `F^-1(t)` through `seed`.
pub fn trace_component(
    map: &PolynomialMap,
    target: &DVector<f64>,
    seed: &DVector<f64>,
    cfg: &TraceConfig,
) -> FiberComponent {
    let ctx = TraceContext::new(map, target, cfg);
    trace_with_context(&ctx, seed)
}

/// Membership test of a point against a traced component. Returns the
/// point-to-polyline distance when the point lies on the component, where
/// "on" allows the chord of each nearby segment to deviate from the true
/// curve by its measured sagitta.
pub(crate) fn distance_if_on_component(
    map: &PolynomialMap,
    target: &DVector<f64>,
    comp: &FiberComponent,
    p: &DVector<f64>,
    cfg: &TraceConfig,
) -> Option<f64> {
    let strict = cfg.dedup_tol.max(100.0 * cfg.newton_tol);
    if comp.points.len() < 2 {
        let d = point_polyline_distance(p, &comp.points);
        return (d <= strict).then_some(d);
    }
    let d = point_polyline_distance(p, &comp.points);
    if d <= strict {
        return Some(d);
    }
    // Envelope: measure how far the nearest chord sits from the curve by
    // projecting its midpoint back onto the fiber.
    let mut best_seg: Option<(usize, f64)> = None;
    for (i, w) in comp.points.windows(2).enumerate() {
        let sd = point_segment_distance(p, &w[0], &w[1]);
        if best_seg.map_or(true, |(_, bd)| sd < bd) {
            best_seg = Some((i, sd));
        }
    }
    let (i, sd) = best_seg?;
    let mid = (&comp.points[i] + &comp.points[i + 1]) * 0.5;
    let proj = newton::project_least_norm(
        |x| map.residual(x, target),
        |x| map.jacobian_matrix(x),
        &mid,
        cfg.newton_tol.max(map.noise_floor(&mid)),
        cfg.newton_max_iter,
    )?;
    let sagitta = (&proj.point - &mid).norm();
    if sd <= 2.0 * sagitta + strict {
        Some(sd)
    } else {
        None
    }
}

/// True when two traces cover the same component: every sampled point of the
/// shorter trace lies on the longer one.
pub(crate) fn same_component(
    map: &PolynomialMap,
    target: &DVector<f64>,
    a: &FiberComponent,
    b: &FiberComponent,
    cfg: &TraceConfig,
) -> bool {
    let (short, long) = if a.points.len() <= b.points.len() { (a, b) } else { (b, a) };
    let n = short.points.len();
    if n == 0 {
        return false;
    }
    let samples = 24.min(n);
    (0..samples).all(|k| {
        let idx = (k * (n - 1) / samples.max(1)).min(n - 1);
        let p = &short.points[idx];
        distance_if_on_component(map, target, long, p, cfg).is_some()
    })
}

/// Traces every component of the fiber `F^-1(t)` inside the working region
/// and merges duplicate traces.
pub fn enumerate_fiber(
    map: &PolynomialMap,
    target: &DVector<f64>,
    cfg: &TraceConfig,
) -> FiberSnapshot {
    assert_eq!(target.len(), map.target_dim(), "target dimension mismatch");
    cfg.validate().expect("invalid trace config");
    let ctx = TraceContext::new(map, target, cfg);
    let (seeds, mut audit) = find_seeds(map, target, cfg);
    let mut comps: Vec<FiberComponent> = Vec::new();
    for seed in &seeds {
        if comps
            .iter()
            .any(|c| distance_if_on_component(map, target, c, seed, cfg).is_some())
        {
            audit.merged += 1;
            continue;
        }
        audit.traced += 1;
        let comp = trace_with_context(&ctx, seed);
        if comp.points.len() < 2 && !comp.tainted {
            audit.rejected += 1;
            continue;
        }
        if let Some(existing) = comps
            .iter_mut()
            .find(|c| same_component(map, target, c, &comp, cfg))
        {
            if comp.arc_length() > existing.arc_length() {
                *existing = comp;
            }
        } else {
            comps.push(comp);
        }
    }
    comps.sort_by(|a, b| {
        a.min_norm_point
            .as_slice()
            .partial_cmp(b.min_norm_point.as_slice())
            .unwrap()
    });
    let tainted = comps.iter().any(|c| c.tainted || c.incomplete);
    FiberSnapshot {
        parameter: target.clone(),
        radius: cfg.radius,
        inner_radius: cfg.inner_radius,
        components: comps,
        seed_audit: audit,
        tainted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    fn map2(text: &str) -> PolynomialMap {
        PolynomialMap::parse(text, &["x", "y"]).unwrap()
    }

    #[test]
    fn seeds_for_vertical_line() {
        let f = map2("x");
        let cfg = TraceConfig::for_dimension(2);
        let (seeds, audit) = find_seeds(&f, &DVector::from_vec(vec![0.0]), &cfg);
        assert!(audit.found > 0);
        // Sphere family must contain the poles (0, +-10).
        let has_pole = |sign: f64| {
            seeds
                .iter()
                .any(|s| s[0].abs() < 1e-6 && (s[1] - sign * 10.0).abs() < 1e-6)
        };
        assert!(has_pole(1.0) && has_pole(-1.0));
        for s in &seeds {
            assert!(s[0].abs() <= 1e-6);
        }
    }

    #[test]
    fn seeds_lie_on_closed_form_fiber() {
        let g = map2("y*(x^2+1)");
        let cfg = TraceConfig::for_dimension(2);
        let (seeds, _) = find_seeds(&g, &DVector::from_vec(vec![1.0]), &cfg);
        assert!(!seeds.is_empty());
        for s in &seeds {
            let expect = 1.0 / (s[0] * s[0] + 1.0);
            assert!(
                (s[1] - expect).abs() <= 1e-6,
                "seed {s:?} off the curve y = 1/(x^2+1)"
            );
        }
    }

    #[test]
    fn seeds_cover_all_three_lines() {
        // x(1 + xy) = 0: the vertical line and both hyperbola branches.
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let (seeds, _) = find_seeds(&f, &DVector::from_vec(vec![0.0]), &cfg);
        let on_line = seeds.iter().any(|s| s[0].abs() <= 1e-6);
        let on_right = seeds.iter().any(|s| s[0] > 0.1 && (s[0] * s[1] + 1.0).abs() <= 1e-5);
        let on_left = seeds.iter().any(|s| s[0] < -0.1 && (s[0] * s[1] + 1.0).abs() <= 1e-5);
        assert!(on_line && on_right && on_left, "missing a seed family");
    }

    #[test]
    fn traces_unit_circle() {
        let f = map2("x^2 + y^2");
        let cfg = TraceConfig::for_dimension(2);
        let comp = trace_component(&f, &DVector::from_vec(vec![1.0]), &vec2(1.0, 0.0), &cfg);
        assert_eq!(comp.kind, ComponentKind::Circle);
        assert!(comp.boundary_hits.is_empty());
        assert!(!comp.incomplete && !comp.tainted);
        assert!((comp.min_norm - 1.0).abs() < 1e-8, "min norm {}", comp.min_norm);
        assert!(
            (comp.points.first().unwrap() - comp.points.last().unwrap()).norm()
                <= cfg.loop_close_tol.max(0.75 * cfg.step_max)
        );
        for p in &comp.points {
            assert!((p.norm() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn traces_vertical_line_arc() {
        let f = map2("x");
        let cfg = TraceConfig::for_dimension(2);
        let comp = trace_component(&f, &DVector::from_vec(vec![0.5]), &vec2(0.5, 0.0), &cfg);
        assert_eq!(comp.kind, ComponentKind::Arc);
        assert_eq!(comp.boundary_hits.len(), 2);
        let expect_y = (100.0f64 - 0.25).sqrt();
        for h in &comp.boundary_hits {
            assert!((h.point[0] - 0.5).abs() < 1e-8);
            assert!((h.point[1].abs() - expect_y).abs() < 1e-6);
        }
        assert!((comp.min_norm - 0.5).abs() < 1e-8);
    }

    #[test]
    fn traces_graph_arc_of_global_fibration() {
        let g = map2("y*(x^2+1)");
        let cfg = TraceConfig::for_dimension(2);
        let comp = trace_component(&g, &DVector::from_vec(vec![1.0]), &vec2(0.0, 1.0), &cfg);
        assert_eq!(comp.kind, ComponentKind::Arc);
        assert_eq!(comp.boundary_hits.len(), 2);
        for h in &comp.boundary_hits {
            assert!((h.point.norm() - 10.0).abs() < 1e-7);
            let expect = 1.0 / (h.point[0] * h.point[0] + 1.0);
            assert!((h.point[1] - expect).abs() < 1e-6);
        }
        for p in &comp.points {
            let expect = 1.0 / (p[0] * p[0] + 1.0);
            assert!((p[1] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn enumerates_two_branches_at_regular_value() {
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let snap = enumerate_fiber(&f, &DVector::from_vec(vec![1.0]), &cfg);
        assert_eq!(snap.components.len(), 2, "audit: {:?}", snap.seed_audit);
        assert!(snap.components.iter().all(|c| c.kind == ComponentKind::Arc));
        assert!(!snap.tainted);
        // One branch on each side of the line x = 0.
        let sides: Vec<bool> = snap.components.iter().map(|c| c.points[0][0] > 0.0).collect();
        assert_ne!(sides[0], sides[1]);
    }

    #[test]
    fn enumerates_three_lines_at_zero() {
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let snap = enumerate_fiber(&f, &DVector::from_vec(vec![0.0]), &cfg);
        assert_eq!(snap.components.len(), 3, "audit: {:?}", snap.seed_audit);
        assert!(snap.components.iter().all(|c| c.kind == ComponentKind::Arc));
    }

    #[test]
    fn single_component_for_trivial_fibration() {
        let g = map2("y*(x^2+1)");
        let cfg = TraceConfig::for_dimension(2);
        for t in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            let snap = enumerate_fiber(&g, &DVector::from_vec(vec![t]), &cfg);
            assert_eq!(snap.components.len(), 1, "t = {t}");
            assert_eq!(snap.components[0].kind, ComponentKind::Arc);
        }
    }

    #[test]
    fn residuals_stay_within_tolerance() {
        let cfg = TraceConfig::for_dimension(2);
        for (text, t) in [("x + x^2*y", 0.5), ("y*(x^2+1)", 0.25), ("x^2 + y^2", 1.0)] {
            let m = map2(text);
            let snap = enumerate_fiber(&m, &DVector::from_vec(vec![t]), &cfg);
            for c in &snap.components {
                assert!(c.max_residual <= 10.0 * cfg.newton_tol);
                for p in &c.points {
                    assert!(m.residual(p, &snap.parameter).amax() <= 10.0 * cfg.newton_tol);
                }
            }
        }
    }

    #[test]
    fn trace_is_idempotent_from_any_component_point() {
        let f = map2("x + x^2*y");
        let cfg = TraceConfig::for_dimension(2);
        let t = DVector::from_vec(vec![0.5]);
        let snap = enumerate_fiber(&f, &t, &cfg);
        for c in &snap.components {
            let mid = &c.points[c.points.len() / 2];
            let redo = trace_component(&f, &t, mid, &cfg);
            assert!(same_component(&f, &t, c, &redo, &cfg));
        }
    }

    #[test]
    fn arc_components_have_two_hits_circles_none() {
        let cfg = TraceConfig::for_dimension(2);
        for (text, t) in [("x + x^2*y", 0.5), ("x^2 + y^2", 1.0), ("y*(x^2+1)", -0.5)] {
            let m = map2(text);
            let snap = enumerate_fiber(&m, &DVector::from_vec(vec![t]), &cfg);
            for c in &snap.components {
                match c.kind {
                    ComponentKind::Arc => assert_eq!(c.boundary_hits.len(), 2),
                    ComponentKind::Circle => assert!(c.boundary_hits.is_empty()),
                }
            }
        }
    }

    #[test]
    fn exterior_mode_splits_line_at_inner_sphere() {
        let f = map2("x");
        let mut cfg = TraceConfig::for_dimension(2);
        cfg.inner_radius = Some(5.0);
        let snap = enumerate_fiber(&f, &DVector::from_vec(vec![0.5]), &cfg);
        assert_eq!(snap.components.len(), 2, "audit: {:?}", snap.seed_audit);
        for c in &snap.components {
            assert_eq!(c.kind, ComponentKind::Arc);
            assert_eq!(c.boundary_hits.len(), 2);
            let sides: Vec<_> = c.boundary_hits.iter().map(|h| h.side).collect();
            assert!(sides.contains(&BoundarySide::Outer));
            assert!(sides.contains(&BoundarySide::Inner));
        }
    }
}
