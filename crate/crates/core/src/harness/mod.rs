//! Datasets, attack campaigns, reporting and image output.

mod campaign;
mod config;
mod dataset;
mod pnm;

pub use campaign::{
    default_thresholds, image_seed, read_csv, run_campaign, sample_indices, summarize, write_csv, CampaignOptions,
    CampaignOutcome, CampaignRecord, CampaignSummary, MedianDistance, MetricSummary,
};
pub use config::{parse_thresholds, AttackSettings, SETTINGS_KEYS};
pub use dataset::{
    blob_center, generate_blobs, load_dataset, load_idx_split, parse_idx, BlobSpec, DataSource, Dataset,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use pnm::{decode_pnm, encode_pnm, write_image_ppm};
