pub mod embedding;
pub mod error;
pub mod instance;
pub mod linalg;
pub mod metric;
pub mod oracle;
pub mod perturb;
pub mod repr;
pub mod fit;
pub mod baselines;
pub mod analogy;
pub mod eval;
pub mod io;
pub mod cli;
