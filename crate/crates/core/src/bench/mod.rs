//! Synthetic source task, corruption suite and domain streams.

pub mod corruption;
pub mod data;
pub mod pretrain;
pub mod stream;

pub use corruption::{apply_corruption, Corruption, CorruptionKind};
pub use data::{generate_source, DataConfig, SyntheticDataset};
pub use pretrain::{accuracy, pretrain_source, PretrainConfig, PretrainReport};
pub use stream::{make_domain_sequence, DomainSegment, DomainSequence, DomainStream};
