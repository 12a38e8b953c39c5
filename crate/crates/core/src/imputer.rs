//! Imputation of missing cells from a fitted copula model: conditional
//! means mapped back through the marginals, and multiple imputation by
//! conditional sampling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MixedDataMatrix, VariableKind};
use crate::em::{estep_row, Constraint, CopulaModel, EmConfig, LatentRowState};
use crate::error::{Error, Result};
use crate::marginals::MarginalModel;
use crate::truncnorm::{DimConstraint, TruncatedBoxProblem};

/// A completed matrix plus which cells were imputed and the latent values
/// that produced them.
#[derive(Debug, Clone)]
pub struct ImputationResult {
    /// The input with every missing cell filled; observed cells unchanged.
    pub completed: MixedDataMatrix,
    /// True where a cell was imputed (the complement of the input mask).
    pub imputed_mask: DMatrix<bool>,
    /// Per-cell latent values behind the completion: conditional means for
    /// single imputation, sampled latents for multiple-imputation draws.
    pub latent: DMatrix<f64>,
    /// Rows with no observed cells, imputed from the prior and flagged.
    pub prior_rows: Vec<usize>,
}

/// A set of sampled completions expressing imputation uncertainty.
#[derive(Debug, Clone)]
pub struct MultipleImputationResult {
    pub draws: Vec<ImputationResult>,
    pub seed: u64,
}

/// Options for conditional sampling.
#[derive(Debug, Clone)]
pub struct SamplingOptions {
    /// Gibbs sweeps per row when sampling the observed ordinal block.
    pub gibbs_sweeps: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { gibbs_sweeps: 20 }
    }
}

fn check_schema(data: &MixedDataMatrix, model: &CopulaModel) -> Result<()> {
    if data.n_cols() != model.dim() {
        return Err(Error::SchemaMismatch(format!(
            "data has {} columns, model has {}",
            data.n_cols(),
            model.dim()
        )));
    }
    for j in 0..data.n_cols() {
        match (&data.kinds()[j], &model.kinds[j]) {
            (VariableKind::Continuous, VariableKind::Continuous) => {}
            (
                VariableKind::Ordinal { levels: a },
                VariableKind::Ordinal { levels: b },
            ) if a <= b => {}
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "column {}: data kind {:?} is incompatible with model kind {:?}",
                    data.column_names()[j],
                    data.kinds()[j],
                    model.kinds[j]
                )))
            }
        }
    }
    Ok(())
}

/// Impute every missing cell at its conditional mean: one final E-step
/// yields E[z | observed cells], the missing coordinates follow from the
/// regression on the observed block, and the marginals map the latent
/// values back to the data scale.
pub fn impute(data: &MixedDataMatrix, model: &CopulaModel) -> Result<ImputationResult> {
    check_schema(data, model)?;
    let n = data.n_rows();
    let p = data.n_cols();
    let config = EmConfig::default();
    let mut values = data.values().clone();
    let mut latent = DMatrix::zeros(n, p);
    let mut prior_rows = Vec::new();

    for i in 0..n {
        let (state, had_obs) = final_estep(data, model, i, &config)?;
        if !had_obs {
            prior_rows.push(i);
        }
        for j in 0..p {
            latent[(i, j)] = state.mean[j];
            if !data.is_observed(i, j) {
                values[(i, j)] = map_to_data(&model.marginals[j], state.mean[j]);
            }
        }
    }

    finish(data, model, values, latent, prior_rows)
}

/// Multiple imputation: draw `m` completions by sampling the latent vector
/// conditional on the observed cells, then mapping each draw through the
/// marginals. Deterministic given `seed`; each (row, draw) pair has its own
/// counter-derived random stream, so results do not depend on evaluation
/// order.
pub fn impute_multiple(
    data: &MixedDataMatrix,
    model: &CopulaModel,
    m: usize,
    seed: u64,
) -> Result<MultipleImputationResult> {
    impute_multiple_with(data, model, m, seed, &SamplingOptions::default())
}

/// As [`impute_multiple`] with explicit sampling options.
pub fn impute_multiple_with(
    data: &MixedDataMatrix,
    model: &CopulaModel,
    m: usize,
    seed: u64,
    options: &SamplingOptions,
) -> Result<MultipleImputationResult> {
    if m < 2 {
        return Err(Error::InvalidArgument(
            "multiple imputation needs at least 2 draws".into(),
        ));
    }
    check_schema(data, model)?;
    let n = data.n_rows();
    let p = data.n_cols();
    let config = EmConfig::default();

    // Per-row sampling setup shared across draws.
    struct RowSampler {
        observed: Vec<usize>,
        missing: Vec<usize>,
        problem: Option<TruncatedBoxProblem>,
        regression: Option<DMatrix<f64>>,
        noise_chol: Option<DMatrix<f64>>,
        base_mean: DVector<f64>,
    }

    let mut rows = Vec::with_capacity(n);
    let mut prior_rows = Vec::new();
    for i in 0..n {
        let (state, had_obs) = final_estep(data, model, i, &config)?;
        if !had_obs {
            prior_rows.push(i);
        }
        let observed: Vec<usize> = (0..p).filter(|&j| data.is_observed(i, j)).collect();
        let missing: Vec<usize> = (0..p).filter(|&j| !data.is_observed(i, j)).collect();
        let s = model.sigma.as_matrix();
        let q = observed.len();

        let problem = if observed
            .iter()
            .any(|&j| matches!(state.constraints[j], Constraint::ObservedOrdinal(_)))
        {
            let mut s_oo = DMatrix::zeros(q, q);
            for (ri, &a) in observed.iter().enumerate() {
                for (ci, &b) in observed.iter().enumerate() {
                    s_oo[(ri, ci)] = s[(a, b)];
                }
            }
            let dims = observed
                .iter()
                .map(|&j| match state.constraints[j] {
                    Constraint::ObservedContinuous(v) => DimConstraint::Known(v),
                    Constraint::ObservedOrdinal(iv) => DimConstraint::Truncated(iv),
                    Constraint::Missing => unreachable!(),
                })
                .collect();
            let estimates = DVector::from_iterator(q, observed.iter().map(|&j| state.mean[j]));
            Some(TruncatedBoxProblem::new(s_oo, dims, estimates)?)
        } else {
            None
        };

        let (regression, noise_chol) = if missing.is_empty() {
            (None, None)
        } else if q == 0 {
            let mut s_mm = DMatrix::zeros(missing.len(), missing.len());
            for (ri, &a) in missing.iter().enumerate() {
                for (ci, &b) in missing.iter().enumerate() {
                    s_mm[(ri, ci)] = s[(a, b)];
                }
            }
            (None, Some(chol_lower(s_mm, config.ridge)?))
        } else {
            let mut s_oo = DMatrix::zeros(q, q);
            for (ri, &a) in observed.iter().enumerate() {
                for (ci, &b) in observed.iter().enumerate() {
                    s_oo[(ri, ci)] = s[(a, b)];
                }
            }
            let mut s_mo = DMatrix::zeros(missing.len(), q);
            for (ri, &a) in missing.iter().enumerate() {
                for (ci, &b) in observed.iter().enumerate() {
                    s_mo[(ri, ci)] = s[(a, b)];
                }
            }
            let lam = match Cholesky::new(s_oo.clone()) {
                Some(c) => c.inverse(),
                None => {
                    let mut rd = s_oo;
                    for d in 0..q {
                        rd[(d, d)] += config.ridge;
                    }
                    Cholesky::new(rd)
                        .ok_or_else(|| Error::Numerical {
                            iteration: 0,
                            reason: "observed block not factorable".into(),
                        })?
                        .inverse()
                }
            };
            let w = &s_mo * &lam;
            let mut schur = -(&w * s_mo.transpose());
            for (ri, &a) in missing.iter().enumerate() {
                for (ci, &b) in missing.iter().enumerate() {
                    schur[(ri, ci)] += s[(a, b)];
                }
            }
            // exact symmetry before factoring
            let schur = 0.5 * (&schur + schur.transpose());
            (Some(w), Some(chol_lower(schur, config.ridge)?))
        };

        rows.push(RowSampler {
            observed,
            missing,
            problem,
            regression,
            noise_chol,
            base_mean: state.mean,
        });
    }

    let mut draws = Vec::with_capacity(m);
    for d in 0..m {
        let mut values = data.values().clone();
        let mut latent = DMatrix::zeros(n, p);
        for (i, row) in rows.iter().enumerate() {
            let mut rng = row_draw_rng(seed, i as u64, d as u64);
            let mut z = row.base_mean.clone();
            if let Some(problem) = &row.problem {
                let sampled = problem.sample_truncated_row_with(options.gibbs_sweeps, &mut rng);
                let mut s_iter = sampled.into_iter();
                for &j in &row.observed {
                    if matches!(
                        data.kinds()[j],
                        VariableKind::Ordinal { .. }
                    ) {
                        z[j] = s_iter.next().expect("one draw per truncated dimension");
                    }
                }
            }
            if !row.missing.is_empty() {
                let xi = DVector::from_iterator(
                    row.missing.len(),
                    (0..row.missing.len()).map(|_| gauss(&mut rng)),
                );
                let noise = row.noise_chol.as_ref().unwrap() * xi;
                let zm = match &row.regression {
                    Some(w) => {
                        let zo = DVector::from_iterator(
                            row.observed.len(),
                            row.observed.iter().map(|&j| z[j]),
                        );
                        w * zo + noise
                    }
                    None => noise,
                };
                for (ri, &j) in row.missing.iter().enumerate() {
                    z[j] = zm[ri];
                }
            }
            for j in 0..p {
                latent[(i, j)] = z[j];
                if !data.is_observed(i, j) {
                    values[(i, j)] = map_to_data(&model.marginals[j], z[j]);
                }
            }
        }
        draws.push(finish(data, model, values, latent, prior_rows.clone())?);
    }

    Ok(MultipleImputationResult { draws, seed })
}

fn final_estep(
    data: &MixedDataMatrix,
    model: &CopulaModel,
    row: usize,
    config: &EmConfig,
) -> Result<(LatentRowState, bool)> {
    let p = data.n_cols();
    let row_vals: Vec<f64> = (0..p).map(|j| data.value(row, j)).collect();
    let row_mask: Vec<bool> = (0..p).map(|j| data.is_observed(row, j)).collect();
    let had_obs = row_mask.iter().any(|&m| m);
    let init = LatentRowState::from_row(&row_vals, &row_mask, &model.marginals)?;
    let out = estep_row(&model.sigma, &init, config)?;
    Ok((out.state, had_obs))
}

fn map_to_data(marginal: &MarginalModel, z: f64) -> f64 {
    match marginal {
        MarginalModel::Continuous(m) => m.from_latent(z),
        MarginalModel::Ordinal(m) => m.level_of(z) as f64,
    }
}

fn finish(
    data: &MixedDataMatrix,
    model: &CopulaModel,
    values: DMatrix<f64>,
    latent: DMatrix<f64>,
    prior_rows: Vec<usize>,
) -> Result<ImputationResult> {
    let (n, p) = (data.n_rows(), data.n_cols());
    let all_observed = DMatrix::from_element(n, p, true);
    let completed = MixedDataMatrix::new(
        values,
        all_observed,
        model.kinds.clone(),
        data.column_names().to_vec(),
        model.labels.clone(),
    )?;
    let imputed_mask = DMatrix::from_fn(n, p, |i, j| !data.is_observed(i, j));
    Ok(ImputationResult {
        completed,
        imputed_mask,
        latent,
        prior_rows,
    })
}

fn chol_lower(mut m: DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c.l()),
        None => {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
            Cholesky::new(m)
                .map(|c| c.l())
                .ok_or_else(|| Error::Numerical {
                    iteration: 0,
                    reason: "conditional covariance not factorable".into(),
                })
        }
    }
}

fn row_draw_rng(seed: u64, row: u64, draw: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&row.to_le_bytes());
    bytes[16..24].copy_from_slice(&draw.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x9E37_79B9_7F4A_7C15u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
