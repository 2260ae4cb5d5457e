//! In-processing bias mitigation: ERM baseline, adversarial debiasing, and
//! fair mixup, each consuming either true or proxy group labels.

mod classifier;
mod trainer;

pub use classifier::{ClassifierModel, ForwardCache};
pub use trainer::{
    train_adversarial, train_erm, train_erm_on_stream, train_fair_mixup, Algorithm, BatchStream,
    MetricVariant, MitigationConfig, TrainSet,
};
