//! Model assembly, training, checkpoints, FLOP accounting and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod flops;
pub mod gradsuite;
pub mod model;
pub mod train;

pub use ablation::{format_runs, run_ablation, Ablation, AblationRun, Distinction};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use data::{load_dataset, load_pairs, synthetic_pair, Pair};
pub use flops::{flops_attention, flops_report, FlopReport};
pub use gradsuite::{run_gradient_suite, SuiteCase, SUITE_TOLERANCE};
pub use model::{build_model, Model, Network};
pub use train::{Adam, LossRecord, Trainer};
