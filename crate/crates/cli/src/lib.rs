//! Command-line front end for the ASF estimators.

pub mod config;
pub mod error;
pub mod ingest;
pub mod run;

pub use config::{resolve, Command, FileConfig, Flags, RunConfig, Source};
pub use error::{CliError, IngestError};
pub use run::{main_with_args, run};
