//! Shared test oracles, independent of the library's evaluation paths.

/// Adaptive Simpson quadrature.
#[allow(dead_code)]
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let s = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_rec(f, a, b, fa, fb, fc, s, tol, 60)
}

#[allow(clippy::too_many_arguments)]
#[allow(dead_code)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    s: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let (fd, fe) = (f(d), f(e));
    let sl = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let sr = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let s2 = sl + sr;
    if depth == 0 || (s2 - s).abs() <= 15.0 * tol {
        return s2 + (s2 - s) / 15.0;
    }
    simpson_rec(f, a, c, fa, fc, fd, sl, 0.5 * tol, depth - 1)
        + simpson_rec(f, c, b, fc, fb, fe, sr, 0.5 * tol, depth - 1)
}

/// Truncated-normal mean and variance by quadrature on the standardized
/// density, scaled so the integrand is O(1) even for far-tail intervals.
#[allow(dead_code)]
pub fn trunc_moments_quadrature(mu: f64, sigma2: f64, a: f64, b: f64) -> (f64, f64) {
    let s = sigma2.sqrt();
    let alpha = if a == f64::NEG_INFINITY { -40.0 } else { ((a - mu) / s).max(-40.0) };
    let beta = if b == f64::INFINITY { 40.0 } else { ((b - mu) / s).min(40.0) };
    assert!(alpha < beta, "degenerate quadrature interval");
    // scale the density by its maximum over the interval, and integrate only
    // where the scaled density is non-negligible so the adaptive rule's
    // initial nodes actually see the mass
    let w_star = 0.0f64.clamp(alpha, beta);
    let limit = (w_star * w_star + 120.0).sqrt();
    let lo = alpha.max(-limit);
    let hi = beta.min(limit);
    let g = move |w: f64| (-0.5 * (w * w - w_star * w_star)).exp();
    let mass = simpson(&g, lo, hi, 1e-14);
    let m1 = simpson(&|w| w * g(w), lo, hi, 1e-14);
    let mean_w = m1 / mass;
    let m2 = simpson(&|w| (w - mean_w) * (w - mean_w) * g(w), lo, hi, 1e-14);
    (mu + s * mean_w, sigma2 * m2 / mass)
}

#[allow(dead_code)]
pub fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
