//! Run configuration, the synthetic corpus, and the steps behind each CLI
//! command.

mod config;
mod gradcheck;
mod pipeline;
mod synthetic;

pub use config::{Overrides, Precision, RunConfig};
pub use gradcheck::{gradcheck_suite, GradCheckRow};
pub use pipeline::*;
pub use synthetic::{
    generate_corpus, SyntheticCorpus, SyntheticSpec, DOCUMENTS_FILE, TEST_FILE, TRAIN_FILE,
    VECTORS_FILE,
};
