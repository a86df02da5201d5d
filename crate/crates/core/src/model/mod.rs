//! The full encoder/decoder network, its configuration and cost analysis.

pub mod analyze;
mod config;
mod phtrans;

pub use analyze::{analyze, count_flops, count_params, AnalysisReport, StageReport, FLOP_CONVENTION};
pub use config::ModelConfig;
pub use phtrans::{DecoderStage, EncoderStage, Hybrid, PhTrans, StageActivations};
