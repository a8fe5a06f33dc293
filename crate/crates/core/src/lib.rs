pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod audiofront;
pub mod poolheads;
pub mod condition;
pub mod network;
pub mod dataset;
pub mod trainer;
pub mod evalviz;

pub use audiofront::{Spectrogram, WaveClip};
pub use condition::DeviceOneHot;
pub use dataset::{ClipRecord, DatasetManifest, Split, SyntheticConfig};
pub use evalviz::{ConfusionMatrix, Metrics, Prediction, RFReport};
pub use network::{SceneNetConfig, TopologyKind};
pub use poolheads::HeadKind;
pub use tensor::{Real, Tensor};
pub use trainer::{StrategyKind, TrainConfig, TrainReport, TrainedModel};
