//! Dataset ingestion, class selection and the synthetic toy problem.

mod dataset;
mod idx;
mod toy;
mod usps;

pub use dataset::{
    load_idx_dataset, normalize_pixels, pad_features, scale_max_abs, select_classes,
    split_train_eval, write_idx_dataset, LabeledDataset, TRAIN_IMAGES, TRAIN_LABELS,
};
pub use idx::{parse_idx, serialize_idx, IdxArray, IdxType};
pub use toy::{generate_direct_sum_toy, SynthSpec};
pub use usps::{convert_usps, upscale};
