//! Dataset ingestion, filtering, splitting, feature files and synthetic data.

mod features;
mod interactions;
pub mod llm;
mod prompt;
mod split;
mod synthetic;

pub use features::{
    load_feature_matrix, read_rgf, save_feature_matrix, write_rgf, EntityKind, FeatureMatrix,
    FeatureSet,
};
pub use interactions::{
    apply_k_core, load_indexed_interactions, load_interactions, save_id_maps, write_interactions,
    Interaction, InteractionTable,
};
pub use llm::{fetch_user_preference, ChatClient};
pub use prompt::{build_user_prompt, PromptRecord, PromptTemplate};
pub use split::{split_dataset, DatasetSplit, DEFAULT_RATIOS};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset};
