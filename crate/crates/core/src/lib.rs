//! Estimating algorithmic progress in language models from augmented
//! scaling laws: ingestion, the model family, fitting, model selection and
//! derived quantities such as doubling times and compute-equivalent gains.

pub mod analysis;
pub mod cluster;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod optim;
pub mod seeds;
pub mod select;
pub mod zoo;

pub use dataset::{Benchmark, Dataset, EvalRecord, Norms};
pub use error::{Error, Result};
pub use fit::{BootstrapEnsemble, FitResult};
pub use zoo::{ModelSpec, ParamVector};
