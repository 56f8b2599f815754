//! Compactly supported radial kernels used by the basis expansions and as
//! the covariance taper.

/// Bisquare weight with aperture `a`: `(1 - (d/a)^2)^2` inside the support.
#[inline]
pub fn eval_bisquare(d: f64, aperture: f64) -> f64 {
    debug_assert!(d >= 0.0 && aperture >= 0.0);
    if d <= aperture && aperture > 0.0 {
        let t = d / aperture;
        let w = 1.0 - t * t;
        w * w
    } else {
        0.0
    }
}

/// Wendland polynomial on the scaled distance `t`:
/// `(1/3)(1-t)^6 (35 t^2 + 18 t + 3)` for `t <= 1`, zero beyond. Equals 1 at
/// the origin, is positive definite on the plane, and reaches zero with high
/// smoothness at the support edge.
#[inline]
pub fn eval_wendland(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t <= 1.0 {
        let u = 1.0 - t;
        let u3 = u * u * u;
        (u3 * u3) * (35.0 * t * t + 18.0 * t + 3.0) / 3.0
    } else {
        0.0
    }
}
