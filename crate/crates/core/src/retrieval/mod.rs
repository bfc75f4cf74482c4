//! Gallery descriptor store, cosine ranking, and CMC / mAP evaluation.

mod index;
mod metrics;
mod rank;

pub use index::{build_gallery, extract_descriptors, GalleryIndex, MAGIC, VERSION};
pub use metrics::{average_precision, evaluate, EvalResult, Query};
pub use rank::{rank_query, similarities, RankedList};

use crate::datapipe::{AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::res2net::Model;

/// Extracts query descriptors with `model` and evaluates them against
/// `gallery`.
pub fn evaluate_model(
    model: &Model<f32>,
    queries: &Dataset,
    gallery: &GalleryIndex,
    aug: &AugmentConfig,
    k_max: usize,
) -> Result<EvalResult> {
    let descs = extract_descriptors(model, queries, aug)?;
    let qs = descs
        .into_iter()
        .zip(queries.records())
        .map(|(d, r)| {
            Ok(Query {
                descriptor: d.values().to_vec(),
                identity: i32::try_from(r.identity)
                    .map_err(|_| Error::Format(format!("identity {} exceeds i32", r.identity)))?,
                camera: r.camera,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&qs, gallery, k_max)
}
