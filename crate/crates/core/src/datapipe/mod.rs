//! Dataset ingestion, image decoding, augmentation and pair sampling.

mod augment;
mod dataset;
mod image;
mod sampler;

pub use augment::{augment, normalize, prepare_eval, random_erase, AugmentConfig, EraseRegion, Normalization};
pub use dataset::{load_dataset, parse_market_name, read_manifest, write_manifest, Dataset, DatasetRecord, DISTRACTOR};
pub use image::{crop, decode_ppm, encode_ppm, load_image, random_crop, resize_bilinear};
pub use sampler::{assemble_batch, positive_count, sample_pair_batch, PairSampler, PairSpec};
