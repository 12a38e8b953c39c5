//! Well-specified Gaussian-copula data generation and MCAR masking for
//! simulation studies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{MixedDataMatrix, VariableKind};
use crate::em::{project_elliptope, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::normal;

/// Marginal family of one generated column.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalFamily {
    Exponential {
        rate: f64,
    },
    Binary,
    /// Ordinal with `levels` levels. `masses` gives the level probabilities
    /// and defaults to equiprobable.
    Ordinal {
        levels: usize,
        masses: Option<Vec<f64>>,
    },
}

/// Specification of one synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub families: Vec<MarginalFamily>,
    pub missing_ratio: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The benchmark layout for p columns: the first third exponential(1),
    /// the next third binary, the rest 1-5 ordinal. For p = 15 this is the
    /// 5/5/5 design.
    pub fn benchmark(n: usize, p: usize, missing_ratio: f64, seed: u64) -> Self {
        let third = p.div_ceil(3);
        let families = (0..p)
            .map(|j| {
                if j < third {
                    MarginalFamily::Exponential { rate: 1.0 }
                } else if j < 2 * third {
                    MarginalFamily::Binary
                } else {
                    MarginalFamily::Ordinal {
                        levels: 5,
                        masses: None,
                    }
                }
            })
            .collect();
        SyntheticSpec {
            n,
            families,
            missing_ratio,
            seed,
        }
    }
}

/// Ground truth returned alongside a generated dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// The latent normal draws, one row per observation.
    pub latent: DMatrix<f64>,
    /// True cutoffs per column; `None` for continuous columns.
    pub cutoffs: Vec<Option<Vec<f64>>>,
}

/// A random correlation matrix: a normalized Gram matrix of a square
/// standard-normal draw. Deterministic given the seed.
pub fn random_correlation(p: usize, seed: u64) -> Result<CorrelationMatrix> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gram = &a * a.transpose();
    project_elliptope(&gram)
}

/// Draw a complete mixed dataset from the copula: latent rows are
/// N(0, sigma), continuous columns go through the exponential quantile
/// transform, ordinal columns through cutoff functions at the requested
/// mass points.
pub fn generate(
    sigma: &CorrelationMatrix,
    spec: &SyntheticSpec,
) -> Result<(MixedDataMatrix, GroundTruth)> {
    let p = sigma.dim();
    if spec.families.len() != p {
        return Err(Error::InvalidArgument(format!(
            "spec has {} families but sigma is {p}x{p}",
            spec.families.len()
        )));
    }
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let chol = nalgebra::Cholesky::new(sigma.as_matrix().clone()).ok_or_else(|| {
        Error::Numerical {
            iteration: 0,
            reason: "generator covariance is numerically singular".into(),
        }
    })?;
    let l = chol.l();

    let mut cutoffs: Vec<Option<Vec<f64>>> = Vec::with_capacity(p);
    for fam in &spec.families {
        match fam {
            MarginalFamily::Exponential { rate } => {
                #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
                if !(*rate > 0.0) {
                    return Err(Error::InvalidArgument("exponential rate must be positive".into()));
                }
                cutoffs.push(None);
            }
            MarginalFamily::Binary => cutoffs.push(Some(vec![0.0])),
            MarginalFamily::Ordinal { levels, masses } => {
                if *levels < 1 {
                    return Err(Error::InvalidArgument("ordinal needs at least 1 level".into()));
                }
                let masses = match masses {
                    Some(m) => {
                        #[allow(clippy::neg_cmp_op_on_partial_ord)]
                        let bad_mass = |x: &f64| !(*x > 0.0); // also rejects NaN
                        if m.len() != *levels
                            || m.iter().any(bad_mass)
                            || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9
                        {
                            return Err(Error::InvalidArgument(
                                "ordinal masses must be positive and sum to 1".into(),
                            ));
                        }
                        m.clone()
                    }
                    None => vec![1.0 / *levels as f64; *levels],
                };
                let mut cum = 0.0;
                let cuts = masses[..*levels - 1]
                    .iter()
                    .map(|&m| {
                        cum += m;
                        normal::quantile(cum)
                    })
                    .collect();
                cutoffs.push(Some(cuts));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut latent = DMatrix::zeros(spec.n, p);
    let mut values = DMatrix::zeros(spec.n, p);
    for i in 0..spec.n {
        let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &l * xi;
        for j in 0..p {
            latent[(i, j)] = z[j];
            values[(i, j)] = match &spec.families[j] {
                MarginalFamily::Exponential { rate } => {
                    // F^{-1}(Phi(z)) = -ln(1 - Phi(z)) / rate, via the upper
                    // tail for precision
                    -normal::upper_tail(z[j]).ln() / rate
                }
                _ => {
                    let cuts = cutoffs[j].as_ref().unwrap();
                    (1 + cuts.iter().filter(|&&s| z[j] > s).count()) as f64
                }
            };
        }
    }

    let kinds: Vec<VariableKind> = spec
        .families
        .iter()
        .map(|f| match f {
            MarginalFamily::Exponential { .. } => VariableKind::Continuous,
            MarginalFamily::Binary => VariableKind::Ordinal { levels: 2 },
            MarginalFamily::Ordinal { levels, .. } => VariableKind::Ordinal { levels: *levels },
        })
        .collect();
    let labels: Vec<Option<Vec<f64>>> = kinds
        .iter()
        .map(|k| match k {
            VariableKind::Continuous => None,
            VariableKind::Ordinal { levels } => {
                Some((1..=*levels).map(|l| l as f64).collect())
            }
        })
        .collect();
    let names = (0..p).map(|j| format!("c{}", j + 1)).collect();
    let mask = DMatrix::from_element(spec.n, p, true);
    let data = MixedDataMatrix::new(values, mask, kinds, names, labels)?;
    Ok((data, GroundTruth { latent, cutoffs }))
}

/// Mask cells independently with probability `ratio` (MCAR). Each column is
/// redrawn (up to 100 attempts) until at least one cell stays observed and,
/// for ordinal columns, every level stays observed. Deterministic given the
/// seed, with one random stream per column.
pub fn mask_mcar(data: &MixedDataMatrix, ratio: f64, seed: u64) -> Result<MixedDataMatrix> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(
            "missing ratio must lie in [0, 1)".into(),
        ));
    }
    let n = data.n_rows();
    let p = data.n_cols();
    let mut mask = data.mask().clone();
    for j in 0..p {
        let mut rng = column_rng(seed, j as u64);
        let mut accepted = false;
        'attempts: for _ in 0..100 {
            let col: Vec<bool> = (0..n)
                .map(|i| data.is_observed(i, j) && rng.random::<f64>() >= ratio)
                .collect();
            if !col.iter().any(|&m| m) {
                continue;
            }
            if let VariableKind::Ordinal { levels } = data.kinds()[j] {
                let mut seen = vec![false; levels];
                for i in 0..n {
                    if col[i] {
                        seen[data.value(i, j) as usize - 1] = true;
                    }
                }
                if seen.iter().any(|&s| !s) {
                    continue 'attempts;
                }
            }
            for i in 0..n {
                mask[(i, j)] = col[i];
            }
            accepted = true;
            break;
        }
        if !accepted {
            return Err(Error::InvalidArgument(format!(
                "column {}: could not keep every level observed at missing ratio {ratio}; lower the ratio",
                data.column_names()[j]
            )));
        }
    }
    data.with_values(data.values().clone(), mask)
}

fn column_rng(seed: u64, column: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&column.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x5851_F42D_4C95_7F2Du64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}
