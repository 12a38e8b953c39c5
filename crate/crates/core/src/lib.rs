//! Gaussian copula modeling of incomplete mixed (continuous + ordinal)
//! tabular data: semiparametric marginal estimation, approximate EM
//! estimation of the copula correlation, and missing-value imputation by
//! conditional means or conditional sampling.
//!
//! The typical pipeline:
//!
//! ```
//! use copula_impute::{data, em, imputer};
//!
//! let csv = "x,rating\n0.7,1\n1.9,\n0.4,2\n,2\n2.2,1\n0.9,2\n1.1,\n0.3,1\n";
//! let table = data::read_csv_text(csv, &data::ColumnSchema::default()).unwrap();
//! let fit = em::fit(&table, &em::EmConfig::default()).unwrap();
//! let completed = imputer::impute(&table, &fit.model).unwrap();
//! assert!(completed.completed.mask().iter().all(|&m| m));
//! ```

pub mod data;
pub mod em;
pub mod error;
pub mod evaluate;
pub mod imputer;
pub mod marginals;
pub mod normal;
pub mod synthetic;
pub mod truncnorm;

pub use data::{ColumnSchema, MixedDataMatrix, VariableKind};
pub use em::{CopulaModel, CorrelationMatrix, EmConfig, FitResult, LatentRowState, UpdateMode};
pub use error::{Error, Result};
pub use evaluate::MetricReport;
pub use imputer::{ImputationResult, MultipleImputationResult};
pub use marginals::{ContinuousMarginal, LatentInterval, MarginalModel, OrdinalMarginal};
pub use synthetic::SyntheticSpec;
pub use truncnorm::{TruncatedBoxProblem, UnivariateTruncMoments};
