//! Live-comment augmented multimodal affective analysis.
//!
//! - [`corpus`]: danmaku parsing, timeline trimming, segmentation, epoch sampling.
//! - [`numerics`]: matrix autodiff and transformer primitives.
//! - [`v2lc`]: video-to-live-comment contrastive encoder.
//! - [`fusion`]: tri-modal fusion with synthetic live-comment features.
//! - [`eval`]: sentiment, emotion and retrieval metrics.
//! - [`synthgen`]: seeded synthetic corpora for desk-scale verification.

pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod numerics;
pub mod seed;
pub mod v2lc;
pub mod synthgen;
