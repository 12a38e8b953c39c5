//! On-disk model format: the correlation matrix as a CSV with column-name
//! header, and the marginals as a plain-text sidecar, so `fit` and `impute`
//! can run as separate invocations. Floats are printed in shortest
//! round-trip form, making save/load lossless.

use std::path::Path;

use copula_impute::em::{CopulaModel, CorrelationMatrix};
use copula_impute::error::{Error, Result};
use copula_impute::marginals::{ContinuousMarginal, MarginalModel, OrdinalMarginal};
use copula_impute::VariableKind;
use nalgebra::DMatrix;

pub fn write_sigma_named(names: &[String], sigma: &CorrelationMatrix, path: &Path) -> Result<()> {
    let p = sigma.dim();
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push('\n');
    let s = sigma.as_matrix();
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| format!("{}", s[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_sigma(path: &Path) -> Result<(Vec<String>, CorrelationMatrix)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines();
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Structure("sigma file is empty".into()))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let p = names.len();
    let mut values = Vec::with_capacity(p * p);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != p {
            return Err(Error::Structure(format!(
                "sigma row {} has {} entries, expected {p}",
                i + 1,
                row.len()
            )));
        }
        for cell in row {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Structure(format!("sigma row {}: bad number {cell:?}", i + 1))
            })?;
            values.push(v);
        }
    }
    if values.len() != p * p {
        return Err(Error::Structure(format!(
            "sigma file has {} rows, expected {p}",
            values.len() / p
        )));
    }
    let sigma = CorrelationMatrix::new(DMatrix::from_row_slice(p, p, &values))?;
    Ok((names, sigma))
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Structure(format!("marginals file: bad number {s:?}")))
        })
        .collect()
}

pub fn write_marginals(model: &CopulaModel, path: &Path) -> Result<()> {
    let mut out = format!("columns={}\n", model.dim());
    for j in 0..model.dim() {
        let name = &model.column_names[j];
        match (&model.marginals[j], &model.labels[j]) {
            (MarginalModel::Continuous(m), _) => {
                out.push_str(&format!(
                    "column={name} kind=continuous n_obs={}\n",
                    m.n_obs()
                ));
                out.push_str(&format!("values={}\n", join_floats(m.sorted_observed())));
            }
            (MarginalModel::Ordinal(m), labels) => {
                out.push_str(&format!(
                    "column={name} kind=ordinal levels={}\n",
                    m.level_count()
                ));
                out.push_str(&format!("cutoffs={}\n", join_floats(m.cutoffs())));
                let label_row = match labels {
                    Some(l) => l.clone(),
                    None => (1..=m.level_count()).map(|l| l as f64).collect(),
                };
                out.push_str(&format!("labels={}\n", join_floats(&label_row)));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct MarginalRecord {
    name: String,
    marginal: MarginalModel,
    kind: VariableKind,
    labels: Option<Vec<f64>>,
}

type MarginalsFile = (
    Vec<String>,
    Vec<MarginalModel>,
    Vec<VariableKind>,
    Vec<Option<Vec<f64>>>,
);

pub fn read_marginals(path: &Path) -> Result<MarginalsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines().peekable();
    let header = lines
        .next()
        .ok_or_else(|| Error::Structure("marginals file is empty".into()))?;
    let expected: usize = header
        .strip_prefix("columns=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Structure("marginals file: missing columns= header".into()))?;

    let mut records: Vec<MarginalRecord> = Vec::with_capacity(expected);
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut name = None;
        let mut kind = None;
        let mut levels = None;
        for token in line.split_whitespace() {
            match token.split_once('=') {
                Some(("column", v)) => name = Some(v.to_string()),
                Some(("kind", v)) => kind = Some(v.to_string()),
                Some(("n_obs", _)) => {}
                Some(("levels", v)) => {
                    levels = Some(v.parse::<usize>().map_err(|_| {
                        Error::Structure(format!("marginals file: bad level count in {line:?}"))
                    })?)
                }
                _ => {
                    return Err(Error::Structure(format!(
                        "marginals file: unrecognized token {token:?}"
                    )))
                }
            }
        }
        let name =
            name.ok_or_else(|| Error::Structure(format!("marginals file: no column in {line:?}")))?;
        match kind.as_deref() {
            Some("continuous") => {
                let values_line = lines
                    .next()
                    .and_then(|l| l.strip_prefix("values="))
                    .ok_or_else(|| {
                        Error::Structure(format!("column {name}: expected a values= line"))
                    })?;
                let values = parse_floats(values_line)?;
                let marginal = ContinuousMarginal::fit(&values).map_err(|e| e.with_column(&name))?;
                records.push(MarginalRecord {
                    name,
                    marginal: MarginalModel::Continuous(marginal),
                    kind: VariableKind::Continuous,
                    labels: None,
                });
            }
            Some("ordinal") => {
                let levels = levels.ok_or_else(|| {
                    Error::Structure(format!("column {name}: ordinal entry needs levels="))
                })?;
                let cutoffs_line = lines
                    .next()
                    .and_then(|l| l.strip_prefix("cutoffs="))
                    .ok_or_else(|| {
                        Error::Structure(format!("column {name}: expected a cutoffs= line"))
                    })?;
                let cutoffs = parse_floats(cutoffs_line)?;
                if cutoffs.len() + 1 != levels {
                    return Err(Error::Structure(format!(
                        "column {name}: {} cutoffs do not match {levels} levels",
                        cutoffs.len()
                    )));
                }
                let labels_line = lines
                    .next()
                    .and_then(|l| l.strip_prefix("labels="))
                    .ok_or_else(|| {
                        Error::Structure(format!("column {name}: expected a labels= line"))
                    })?;
                let labels = parse_floats(labels_line)?;
                if labels.len() != levels {
                    return Err(Error::Structure(format!(
                        "column {name}: {} labels do not match {levels} levels",
                        labels.len()
                    )));
                }
                let marginal = OrdinalMarginal::from_cutoffs(cutoffs)?;
                records.push(MarginalRecord {
                    name,
                    marginal: MarginalModel::Ordinal(marginal),
                    kind: VariableKind::Ordinal { levels },
                    labels: Some(labels),
                });
            }
            other => {
                return Err(Error::Structure(format!(
                    "column {name}: unknown kind {other:?}"
                )))
            }
        }
    }
    if records.len() != expected {
        return Err(Error::Structure(format!(
            "marginals file: found {} columns, header says {expected}",
            records.len()
        )));
    }
    let mut names = Vec::with_capacity(expected);
    let mut marginals = Vec::with_capacity(expected);
    let mut kinds = Vec::with_capacity(expected);
    let mut labels = Vec::with_capacity(expected);
    for r in records {
        names.push(r.name);
        marginals.push(r.marginal);
        kinds.push(r.kind);
        labels.push(r.labels);
    }
    Ok((names, marginals, kinds, labels))
}

/// Load a full model from its two files, checking that they agree.
pub fn read_model(sigma_path: &Path, marginals_path: &Path) -> Result<CopulaModel> {
    let (sigma_names, sigma) = read_sigma(sigma_path)?;
    let (names, marginals, kinds, labels) = read_marginals(marginals_path)?;
    if sigma_names != names {
        return Err(Error::SchemaMismatch(
            "sigma and marginals files disagree on column names".into(),
        ));
    }
    if sigma.dim() != names.len() {
        return Err(Error::SchemaMismatch(
            "sigma dimension does not match the marginals".into(),
        ));
    }
    Ok(CopulaModel {
        sigma,
        marginals,
        kinds,
        column_names: names,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use copula_impute::data::{read_csv_text, ColumnSchema};
    use copula_impute::em::{self, EmConfig};

    fn fitted_model() -> CopulaModel {
        let csv = "x,o\n0.5,1\n1.5,2\n2.25,1\n,2\n3.5,\n1.125,1\n0.75,2\n";
        let data = read_csv_text(csv, &ColumnSchema::default()).unwrap();
        em::fit(&data, &EmConfig::default()).unwrap().model
    }

    #[test]
    fn model_round_trips_exactly() {
        let model = fitted_model();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("sigma.csv");
        let mp = dir.path().join("marginals.txt");
        write_sigma_named(&model.column_names, &model.sigma, &sp).unwrap();
        write_marginals(&model, &mp).unwrap();
        let loaded = read_model(&sp, &mp).unwrap();
        assert_eq!(loaded.sigma.as_matrix(), model.sigma.as_matrix());
        assert_eq!(loaded.marginals, model.marginals);
        assert_eq!(loaded.kinds, model.kinds);
        assert_eq!(loaded.column_names, model.column_names);
        assert_eq!(loaded.labels, model.labels);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let model = fitted_model();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("sigma.csv");
        let mp = dir.path().join("marginals.txt");
        write_sigma_named(&model.column_names, &model.sigma, &sp).unwrap();
        write_marginals(&model, &mp).unwrap();

        std::fs::write(dir.path().join("bad.csv"), "x,o\n1.0,0.5\n0.7,1.0\n").unwrap();
        assert!(read_sigma(&dir.path().join("bad.csv")).is_err());

        let text = std::fs::read_to_string(&mp).unwrap();
        std::fs::write(&mp, text.replace("kind=ordinal", "kind=nominal")).unwrap();
        assert!(read_marginals(&mp).is_err());
    }
}
