//! The TempoFormer stream classifier, its ablation switches, the recurrent
//! variant and checkpoint files.

mod checkpoint;
mod config;
mod recurrent;
mod tempoformer;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{AblationFlags, ModelConfig, TimeMode, TimeTransform, Variant};
pub use recurrent::{BiLstm, LstmCell};
pub use tempoformer::{
    argmax, post_phases, Batch, ContextOutput, GateParams, HeadParams, Prepared, StreamOutput,
    TempoFormer, Trace,
};
