//! Adversarial and deep-feature regularizers.

pub mod adversarial;
pub mod deep_feature;

pub use adversarial::{
    adversarial_step, discriminator_loss, separator_adv_loss, AdvBatch, AdvConfig, AdvStepReport,
    Discriminator, DiscriminatorArch, SeparatorAdvLoss, Separator,
};
pub use deep_feature::{
    deep_feature_loss, feature_loss, gram, style_loss, DeepFeatureWeights, EmbeddingNet,
    FeatureExtractor, FeatureTrace, GramMatrix, IdentityFeatures,
};
