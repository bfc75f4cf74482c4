//! Multi-task person re-identification: a Res2Net-block backbone trained
//! jointly with identification and verification losses, with cosine
//! retrieval and CMC/mAP evaluation.

pub mod cli;
pub mod datapipe;
pub mod error;
pub mod gradcheck;
pub mod multitask;
pub mod res2net;
pub mod retrieval;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
