//! Truncated-normal machinery: exact univariate moments with tail-stable
//! evaluation, single-coordinate conditional updates for box-truncated
//! multivariate normals, and a Gibbs sampler for conditional draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::marginals::LatentInterval;
use crate::normal;

/// Mass below which a doubly-finite truncation interval is treated as
/// degenerate: the moments collapse to the endpoint nearest the mean.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// First and second moments of a univariate normal restricted to an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateTruncMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of N(mu, sigma2) truncated to (a, b].
///
/// One-sided intervals are evaluated through the scaled complementary error
/// function, so they stay accurate arbitrarily far into the tails. For
/// doubly-finite intervals whose mass falls below [`DEGENERATE_MASS`] the
/// moments collapse to the endpoint nearest `mu` with zero variance; this is
/// documented behavior, not an error.
pub fn univariate_moments(mu: f64, sigma2: f64, a: f64, b: f64) -> UnivariateTruncMoments {
    assert!(sigma2 > 0.0, "truncated moments require sigma2 > 0");
    assert!(a < b, "truncated moments require a < b");
    let sigma = sigma2.sqrt();

    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return UnivariateTruncMoments {
            mean: mu,
            variance: sigma2,
        };
    }

    if b == f64::INFINITY {
        // Lower truncation only: mean = mu + sigma*h(alpha) with the
        // normal hazard h, variance factor 1 + alpha*h - h^2.
        let alpha = (a - mu) / sigma;
        let h = normal::hazard(alpha);
        let mean = (mu + sigma * h).max(a);
        let variance = (sigma2 * (1.0 + alpha * h - h * h)).clamp(0.0, sigma2);
        return UnivariateTruncMoments { mean, variance };
    }

    if a == f64::NEG_INFINITY {
        // Mirror of the lower-truncation case.
        let reflected = univariate_moments(-mu, sigma2, -b, f64::INFINITY);
        return UnivariateTruncMoments {
            mean: -reflected.mean,
            variance: reflected.variance,
        };
    }

    let alpha = (a - mu) / sigma;
    let beta = (b - mu) / sigma;
    let (r1, r2, mass) = if alpha >= 0.0 {
        two_sided_tail_ratios(alpha, beta)
    } else if beta <= 0.0 {
        let (r1, r2, mass) = two_sided_tail_ratios(-beta, -alpha);
        (-r1, r2, mass)
    } else {
        // The interval straddles the mode; the direct formulas are stable.
        let mass = normal::cdf(beta) - normal::cdf(alpha);
        let pa = normal::pdf(alpha);
        let pb = normal::pdf(beta);
        (
            (pa - pb) / mass,
            (alpha * pa - beta * pb) / mass,
            mass,
        )
    };

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN mass takes the fallback
    if !(mass >= DEGENERATE_MASS) {
        let endpoint = if (mu - a).abs() <= (b - mu).abs() { a } else { b };
        return UnivariateTruncMoments {
            mean: endpoint,
            variance: 0.0,
        };
    }

    let mean = (mu + sigma * r1).clamp(a, b);
    let variance = (sigma2 * (1.0 + r2 - r1 * r1)).clamp(0.0, sigma2);
    UnivariateTruncMoments { mean, variance }
}

/// Ratio terms for a doubly-finite interval with 0 <= alpha < beta:
/// r1 = (phi(a)-phi(b))/mass, r2 = (a phi(a)-b phi(b))/mass, and the mass
/// itself. Scaling by exp(alpha^2/2) through erfcx avoids the catastrophic
/// cancellation of subtracting two tiny tail probabilities.
fn two_sided_tail_ratios(alpha: f64, beta: f64) -> (f64, f64, f64) {
    debug_assert!(alpha >= 0.0 && beta > alpha);
    let expo = -0.5 * (beta - alpha) * (beta + alpha); // (alpha^2 - beta^2)/2
    let d = expo.exp(); // exp((alpha^2-beta^2)/2) in (0, 1]
    let ea = normal::erfcx(alpha * std::f64::consts::FRAC_1_SQRT_2);
    let eb = normal::erfcx(beta * std::f64::consts::FRAC_1_SQRT_2);
    let denom = ea - d * eb; // 2 exp(alpha^2/2) (Q(alpha) - Q(beta))
    let mass = 0.5 * (-0.5 * alpha * alpha).exp() * denom;
    let one_minus_d = -expo.exp_m1();
    let r1 = normal::SQRT_2_FRAC_PI * one_minus_d / denom;
    let r2 = normal::SQRT_2_FRAC_PI * (alpha - beta * d) / denom;
    (r1, r2, mass)
}

/// Constraint on one coordinate of a truncated multivariate normal row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimConstraint {
    /// Observed continuous coordinate pinned to a latent value.
    Known(f64),
    /// Observed ordinal coordinate restricted to a latent interval.
    Truncated(LatentInterval),
}

/// A zero-mean normal vector with covariance `sigma`, some coordinates
/// pinned to known values and the rest restricted to intervals, together
/// with the current running estimate of the truncated coordinates' means.
#[derive(Debug, Clone)]
pub struct TruncatedBoxProblem {
    sigma: DMatrix<f64>,
    dims: Vec<DimConstraint>,
    estimates: DVector<f64>,
    ridge: f64,
}

impl TruncatedBoxProblem {
    /// `estimates` holds one value per dimension: the pinned value for
    /// known dimensions and the current mean estimate for truncated ones.
    pub fn new(
        sigma: DMatrix<f64>,
        dims: Vec<DimConstraint>,
        estimates: DVector<f64>,
    ) -> Result<Self> {
        let p = dims.len();
        if sigma.nrows() != p || sigma.ncols() != p || estimates.len() != p {
            return Err(Error::InvalidArgument(
                "truncated box problem: dimension mismatch".into(),
            ));
        }
        for i in 0..p {
            if sigma[(i, i)] <= 0.0 {
                return Err(Error::InvalidArgument(
                    "truncated box problem: sigma needs a positive diagonal".into(),
                ));
            }
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(
                        "truncated box problem: sigma must be symmetric".into(),
                    ));
                }
            }
        }
        for (d, &e) in dims.iter().zip(estimates.iter()) {
            if let DimConstraint::Known(v) = d {
                if *v != e {
                    return Err(Error::InvalidArgument(
                        "truncated box problem: estimate of a known dimension must equal its value"
                            .into(),
                    ));
                }
            }
        }
        Ok(TruncatedBoxProblem {
            sigma,
            dims,
            estimates,
            ridge: 1e-8,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn estimates(&self) -> &DVector<f64> {
        &self.estimates
    }

    pub fn interval(&self, j: usize) -> Option<LatentInterval> {
        match self.dims.get(j) {
            Some(DimConstraint::Truncated(iv)) => Some(*iv),
            _ => None,
        }
    }

    /// Conditional law of coordinate `j` given all other coordinates at the
    /// current estimates: mean Sigma_{j,-j} Sigma_{-j,-j}^{-1} z_{-j} and
    /// variance Sigma_{jj} - Sigma_{j,-j} Sigma_{-j,-j}^{-1} Sigma_{-j,j}.
    /// Falls back to a ridged solve when Sigma_{-j,-j} is not factorable.
    pub fn conditional_law(&self, j: usize) -> (f64, f64, bool) {
        let p = self.dim();
        assert!(j < p, "dimension index out of range");
        if p == 1 {
            return (0.0, self.sigma[(0, 0)], false);
        }
        let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
        let q = others.len();
        let mut sub = DMatrix::zeros(q, q);
        for (ri, &i) in others.iter().enumerate() {
            for (ci, &c) in others.iter().enumerate() {
                sub[(ri, ci)] = self.sigma[(i, c)];
            }
        }
        let cross = DVector::from_iterator(q, others.iter().map(|&i| self.sigma[(j, i)]));
        let z = DVector::from_iterator(q, others.iter().map(|&i| self.estimates[i]));

        let (chol, ridged) = match nalgebra::Cholesky::new(sub.clone()) {
            Some(c) => (c, false),
            None => {
                for i in 0..q {
                    sub[(i, i)] += self.ridge;
                }
                let c = nalgebra::Cholesky::new(sub)
                    .expect("ridged conditioning matrix must be factorable");
                (c, true)
            }
        };
        let w = chol.solve(&z);
        let mu = cross.dot(&w);
        let s2 = (self.sigma[(j, j)] - cross.dot(&chol.solve(&cross))).max(1e-12);
        (mu, s2, ridged)
    }

    /// One conditional-moment update for truncated dimension `j`: the
    /// univariate truncated mean at the conditional law given the other
    /// dimensions' current estimates.
    pub fn conditional_update(&self, j: usize) -> (UnivariateTruncMoments, bool) {
        let iv = self
            .interval(j)
            .expect("conditional update requires a truncated dimension");
        let (mu, s2, ridged) = self.conditional_law(j);
        (univariate_moments(mu, s2, iv.lower, iv.upper), ridged)
    }

    /// The mean part of [`Self::conditional_update`].
    pub fn conditional_mean_update(&self, j: usize) -> f64 {
        self.conditional_update(j).0.mean
    }

    /// The variance part of [`Self::conditional_update`]. This is the
    /// truncated conditional variance alone; the variance contributed by
    /// uncertainty in the conditioning values is deliberately dropped.
    pub fn conditional_var_update(&self, j: usize) -> f64 {
        self.conditional_update(j).0.variance
    }

    /// Replace the running estimate of truncated dimension `j`.
    pub fn set_estimate(&mut self, j: usize, value: f64) {
        assert!(
            matches!(self.dims[j], DimConstraint::Truncated(_)),
            "only truncated dimensions may be re-estimated"
        );
        self.estimates[j] = value;
    }

    /// Draw the truncated coordinates from their conditional distribution by
    /// Gibbs sweeps of univariate inverse-CDF draws, starting from the
    /// current estimates. Returns one value per truncated dimension, in
    /// ascending dimension order. Deterministic given the seed.
    pub fn sample_truncated_row(&self, sweeps: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_truncated_row_with(sweeps, &mut rng)
    }

    /// As [`Self::sample_truncated_row`] with a caller-provided RNG.
    pub fn sample_truncated_row_with<R: Rng + ?Sized>(
        &self,
        sweeps: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        let p = self.dim();
        let truncated: Vec<usize> = (0..p)
            .filter(|&j| matches!(self.dims[j], DimConstraint::Truncated(_)))
            .collect();
        if truncated.is_empty() {
            return Vec::new();
        }
        let lam = self.precision();
        let mut z = self.estimates.clone();
        let mut lz = &lam * &z;
        for _ in 0..sweeps {
            for &j in &truncated {
                let iv = self.interval(j).unwrap();
                let s2 = (1.0 / lam[(j, j)]).max(1e-12);
                let mu = z[j] - lz[j] * s2;
                let u = 1.0 - rng.random::<f64>(); // in (0, 1]
                let draw = sample_univariate(mu, s2.sqrt(), iv, u);
                let delta = draw - z[j];
                if delta != 0.0 {
                    z[j] = draw;
                    lz.axpy(delta, &lam.column(j).into_owned(), 1.0);
                }
            }
        }
        truncated.iter().map(|&j| z[j]).collect()
    }

    fn precision(&self) -> DMatrix<f64> {
        match nalgebra::Cholesky::new(self.sigma.clone()) {
            Some(c) => c.inverse(),
            None => {
                let mut m = self.sigma.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += self.ridge;
                }
                nalgebra::Cholesky::new(m)
                    .expect("ridged covariance must be factorable")
                    .inverse()
            }
        }
    }
}

/// Inverse-CDF draw from N(mu, sigma^2) truncated to `iv`, driven by a
/// uniform u in (0, 1]. Works in whichever tail representation keeps
/// relative precision.
pub fn sample_univariate(mu: f64, sigma: f64, iv: LatentInterval, u: f64) -> f64 {
    let alpha = if iv.lower == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        (iv.lower - mu) / sigma
    };
    let beta = if iv.upper == f64::INFINITY {
        f64::INFINITY
    } else {
        (iv.upper - mu) / sigma
    };
    let std = sample_standard(alpha, beta, u);
    (mu + sigma * std).clamp(iv.lower, iv.upper)
}

fn sample_standard(alpha: f64, beta: f64, u: f64) -> f64 {
    if alpha >= 0.0 {
        // Right tail: interpolate upper-tail masses.
        let qa = if alpha == f64::INFINITY { 0.0 } else { normal::upper_tail(alpha) };
        let qb = if beta == f64::INFINITY { 0.0 } else { normal::upper_tail(beta) };
        let q = qb + (qa - qb) * u;
        if q <= 0.0 {
            return if beta.is_finite() { beta } else { alpha };
        }
        normal::upper_quantile(q)
    } else if beta <= 0.0 {
        -sample_standard(-beta, -alpha, u)
    } else {
        let pa = if alpha == f64::NEG_INFINITY { 0.0 } else { normal::cdf(alpha) };
        let pb = normal::cdf(beta);
        let p = pa + (pb - pa) * u;
        if p <= 0.0 {
            return alpha.max(beta - 1.0);
        }
        if p >= 1.0 {
            return beta.min(alpha + 1.0);
        }
        normal::quantile(p)
    }
}
