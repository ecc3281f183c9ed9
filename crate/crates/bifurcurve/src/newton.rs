//! Newton-type solvers shared by the tracing, topology and diagnostic code.

use nalgebra::{DMatrix, DVector};

pub struct NewtonOutcome {
    pub point: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Plain Newton iteration on a square system. Returns `None` on a singular
/// linearisation, divergence or failure to reach `tol` within `max_iter`.
pub fn solve_square<F, J>(
    f: F,
    j: J,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = x0.clone();
    for it in 0..=max_iter {
        let r = f(&x);
        let rn = r.amax();
        if !rn.is_finite() {
            return None;
        }
        if rn <= tol {
            return Some(NewtonOutcome {
                point: x,
                residual: rn,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let jac = j(&x);
        let dx = jac.lu().solve(&(-&r))?;
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        x += dx;
    }
    None
}

/// Gauss-Newton least-norm iteration on an underdetermined system
/// `F(x) = target` with `m < n` equations: each step is the minimum-norm
/// correction, so the iteration converges to a nearby point of the solution
/// set.
pub fn project_least_norm<F, J>(
    f: F,
    j: J,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = x0.clone();
    for it in 0..=max_iter {
        let r = f(&x);
        let rn = r.amax();
        if !rn.is_finite() {
            return None;
        }
        if rn <= tol {
            return Some(NewtonOutcome {
                point: x,
                residual: rn,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let jac = j(&x);
        let gram = &jac * jac.transpose();
        let y = gram.lu().solve(&(-&r))?;
        let dx = jac.transpose() * y;
        if !dx.iter().all(|v| v.is_finite()) {
            return None;
        }
        x += dx;
    }
    None
}

/// Unit tangent of the solution curve of `F(x) = t` at a point, together with
/// the smallest singular value of the Jacobian there. The tangent spans the
/// null space of the `(n-1) x n` Jacobian; a small singular value signals
/// proximity to the critical set, where the tangent is unreliable.
pub fn fiber_tangent(jac: &DMatrix<f64>) -> Option<(DVector<f64>, f64)> {
    let n = jac.ncols();
    debug_assert_eq!(jac.nrows() + 1, n);
    let padded = jac.clone().insert_row(jac.nrows(), 0.0);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let tangent: DVector<f64> = v_t.row(n - 1).transpose();
    let sigma_min = svd.singular_values[n - 2];
    let norm = tangent.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some((tangent / norm, sigma_min))
}

/// Flips the sign so the first coordinate of magnitude above `eps` is
/// positive; a deterministic orientation for the first predictor step.
pub fn orient_lex_positive(mut v: DVector<f64>) -> DVector<f64> {
    const EPS: f64 = 1e-12;
    for i in 0..v.len() {
        if v[i].abs() > EPS {
            if v[i] < 0.0 {
                v = -v;
            }
            break;
        }
    }
    v
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Distance from `p` to a polyline, by the nearest segment.
pub fn point_polyline_distance(p: &DVector<f64>, points: &[DVector<f64>]) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    if points.len() == 1 {
        return (p - &points[0]).norm();
    }
    points
        .windows(2)
        .map(|w| point_segment_distance(p, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_newton_solves_circle_line() {
        // Intersection of the unit circle with the line x = 0.6.
        let f = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 1.0, x[0] - 0.6])
        };
        let j = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 1.0, 0.0])
        };
        let out = solve_square(f, j, &DVector::from_vec(vec![0.5, 0.5]), 1e-12, 30).unwrap();
        assert!((out.point[0] - 0.6).abs() < 1e-10);
        assert!((out.point[1] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn least_norm_projects_to_nearest_curve_point() {
        // Project onto the unit circle from slightly outside.
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] + x[1] * x[1] - 1.0]);
        let j = |x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]);
        let out = project_least_norm(f, j, &DVector::from_vec(vec![1.3, 0.0]), 1e-12, 30).unwrap();
        assert!((out.point[0] - 1.0).abs() < 1e-10);
        assert!(out.point[1].abs() < 1e-10);
    }

    #[test]
    fn tangent_spans_null_space() {
        // F = x  =>  J = [1, 0], tangent = (0, +-1), sigma_min = 1.
        let jac = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (t, s) = fiber_tangent(&jac).unwrap();
        assert!(t[0].abs() < 1e-12 && (t[1].abs() - 1.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polyline_distance_basics() {
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let p = DVector::from_vec(vec![0.5, 0.7]);
        assert!((point_segment_distance(&p, &a, &b) - 0.7).abs() < 1e-15);
    }
}
