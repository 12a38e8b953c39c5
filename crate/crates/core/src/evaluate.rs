//! Imputation and correlation-recovery metrics, and the masked-holdout
//! experiment driver.

use std::collections::BTreeMap;

use crate::data::{MixedDataMatrix, VariableKind};
use crate::em::{self, CorrelationMatrix, EmConfig};
use crate::error::{Error, Result};
use crate::imputer;
use crate::synthetic;

/// Metric grouping of column kinds: binary is reported separately from
/// wider ordinals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VariableClass {
    Continuous,
    Binary,
    Ordinal,
}

impl VariableClass {
    pub fn of(kind: &VariableKind) -> Self {
        match kind {
            VariableKind::Continuous => VariableClass::Continuous,
            VariableKind::Ordinal { levels: 2 } => VariableClass::Binary,
            VariableKind::Ordinal { .. } => VariableClass::Ordinal,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VariableClass::Continuous => "continuous",
            VariableClass::Binary => "binary",
            VariableClass::Ordinal => "ordinal",
        }
    }
}

/// Imputation metrics for one evaluation run.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// Mean per-column SMAE per data type; a type is absent when it has no
    /// column with a defined SMAE.
    pub smae_by_type: BTreeMap<VariableClass, f64>,
    pub mae: f64,
    pub rmse: f64,
    /// Present only when a ground-truth correlation was supplied.
    pub corr_rel_error: Option<f64>,
    pub per_column_smae: Vec<Option<f64>>,
    /// Columns whose SMAE denominator was zero, excluded from the averages.
    pub undefined_smae_columns: Vec<usize>,
}

/// Scaled mean absolute error of one column against column-median
/// imputation: |imputed - truth|_1 / |median - truth|_1. `None` when the
/// median predicts the held-out truth perfectly (zero denominator).
pub fn smae(imputed: &[f64], truth: &[f64], observed_median: f64) -> Option<f64> {
    assert_eq!(imputed.len(), truth.len(), "smae needs equal-length vectors");
    assert!(!truth.is_empty(), "smae needs at least one cell");
    let num: f64 = imputed
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let den: f64 = truth.iter().map(|t| (observed_median - t).abs()).sum();
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

/// Relative Frobenius error |est - truth|_F / |truth|_F.
pub fn corr_rel_error(estimate: &CorrelationMatrix, truth: &CorrelationMatrix) -> f64 {
    assert_eq!(estimate.dim(), truth.dim(), "dimension mismatch");
    (estimate.as_matrix() - truth.as_matrix()).norm() / truth.as_matrix().norm()
}

/// Median of a column's observed cells. Continuous columns use the
/// usual midpoint convention; ordinal columns take the lower median so the
/// baseline stays a valid level.
pub fn observed_median(kind: &VariableKind, observed: &[f64]) -> f64 {
    assert!(!observed.is_empty(), "median of an empty column");
    let mut sorted = observed.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    match kind {
        VariableKind::Continuous => {
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
        VariableKind::Ordinal { .. } => sorted[(n - 1) / 2],
    }
}

/// Score a completion against held-out truth. A cell is scored when it is
/// observed in `truth_data` but masked in `masked` (the data the model saw).
pub fn score(
    truth_data: &MixedDataMatrix,
    masked: &MixedDataMatrix,
    completed: &MixedDataMatrix,
    estimate: Option<&CorrelationMatrix>,
    truth_sigma: Option<&CorrelationMatrix>,
) -> Result<MetricReport> {
    let n = truth_data.n_rows();
    let p = truth_data.n_cols();
    let mut per_column = Vec::with_capacity(p);
    let mut undefined = Vec::new();
    let mut by_type: BTreeMap<VariableClass, Vec<f64>> = BTreeMap::new();
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut cells = 0usize;

    for j in 0..p {
        let mut imputed = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            if truth_data.is_observed(i, j) && !masked.is_observed(i, j) {
                imputed.push(completed.value(i, j));
                truth.push(truth_data.value(i, j));
            }
        }
        if truth.is_empty() {
            per_column.push(None);
            continue;
        }
        for (a, b) in imputed.iter().zip(&truth) {
            let d = (a - b).abs();
            abs_sum += d;
            sq_sum += d * d;
            cells += 1;
        }
        let med = observed_median(&truth_data.kinds()[j], &masked.observed_column(j));
        match smae(&imputed, &truth, med) {
            Some(v) => {
                by_type
                    .entry(VariableClass::of(&truth_data.kinds()[j]))
                    .or_default()
                    .push(v);
                per_column.push(Some(v));
            }
            None => {
                undefined.push(j);
                per_column.push(None);
            }
        }
    }
    if cells == 0 {
        return Err(Error::InvalidArgument(
            "empty test set: no held-out cells to score".into(),
        ));
    }

    let corr = match (estimate, truth_sigma) {
        (Some(e), Some(t)) => Some(corr_rel_error(e, t)),
        _ => None,
    };
    Ok(MetricReport {
        smae_by_type: by_type
            .into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
        mae: abs_sum / cells as f64,
        rmse: (sq_sum / cells as f64).sqrt(),
        corr_rel_error: corr,
        per_column_smae: per_column,
        undefined_smae_columns: undefined,
    })
}

/// One failed repeat of the holdout experiment.
#[derive(Debug, Clone)]
pub struct RepeatFailure {
    pub repeat: usize,
    pub message: String,
}

/// Holdout experiment output: one report per successful repeat, failures
/// recorded rather than fatal.
#[derive(Debug, Clone)]
pub struct HoldoutOutcome {
    pub reports: Vec<MetricReport>,
    pub failures: Vec<RepeatFailure>,
}

/// Repeatedly mask `mask_ratio` of the observed cells, fit, impute, and
/// score against the held-out truth. Each repeat is seed-isolated and
/// deterministic given `seed`.
pub fn holdout_experiment(
    data: &MixedDataMatrix,
    mask_ratio: f64,
    repeats: usize,
    seed: u64,
    config: &EmConfig,
    truth_sigma: Option<&CorrelationMatrix>,
) -> Result<HoldoutOutcome> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if mask_ratio <= 0.0 {
        return Err(Error::InvalidArgument(
            "empty test set: mask ratio must be positive".into(),
        ));
    }
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in 0..repeats {
        let repeat_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(r as u64);
        let attempt = (|| -> Result<MetricReport> {
            let masked = synthetic::mask_mcar(data, mask_ratio, repeat_seed)?;
            let fit = em::fit(&masked, config)?;
            let out = imputer::impute(&masked, &fit.model)?;
            score(
                data,
                &masked,
                &out.completed,
                Some(&fit.model.sigma),
                truth_sigma,
            )
        })();
        match attempt {
            Ok(report) => reports.push(report),
            Err(e) => failures.push(RepeatFailure {
                repeat: r,
                message: e.to_string(),
            }),
        }
    }
    Ok(HoldoutOutcome { reports, failures })
}

/// Mean and standard deviation of each metric across repeats, in the
/// "mean(sd)" presentation used for reporting.
pub fn summarize(reports: &[MetricReport]) -> Vec<(String, f64, f64)> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |name: &str, value: Option<f64>| {
        if let Some(v) = value {
            match rows.iter_mut().find(|(n, _)| n == name) {
                Some((_, vs)) => vs.push(v),
                None => rows.push((name.to_string(), vec![v])),
            }
        }
    };
    for r in reports {
        for (class, v) in &r.smae_by_type {
            push(&format!("smae_{}", class.label()), Some(*v));
        }
        push("mae", Some(r.mae));
        push("rmse", Some(r.rmse));
        push("corr_rel_error", r.corr_rel_error);
    }
    rows.into_iter()
        .map(|(name, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let sd = if vs.len() > 1 {
                (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (name, mean, sd)
        })
        .collect()
}

/// Aligned-column text rendering of a summary.
pub fn render_summary_text(summary: &[(String, f64, f64)]) -> String {
    let width = summary
        .iter()
        .map(|(n, _, _)| n.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = String::new();
    out.push_str(&format!("{:<width$}  mean(sd)\n", "metric", width = width));
    for (name, mean, sd) in summary {
        out.push_str(&format!(
            "{:<width$}  {:.4}({:.4})\n",
            name,
            mean,
            sd,
            width = width
        ));
    }
    out
}

/// CSV rendering: one row per repeat plus mean/sd summary rows.
pub fn render_report_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("repeat,metric,value\n");
    for (r, report) in reports.iter().enumerate() {
        for (class, v) in &report.smae_by_type {
            out.push_str(&format!("{},smae_{},{}\n", r, class.label(), v));
        }
        out.push_str(&format!("{},mae,{}\n", r, report.mae));
        out.push_str(&format!("{},rmse,{}\n", r, report.rmse));
        if let Some(c) = report.corr_rel_error {
            out.push_str(&format!("{r},corr_rel_error,{c}\n"));
        }
    }
    for (name, mean, sd) in summarize(reports) {
        out.push_str(&format!("mean,{name},{mean}\n"));
        out.push_str(&format!("sd,{name},{sd}\n"));
    }
    out
}
