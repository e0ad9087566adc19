//! Adaptive high-frequency vision transformer for individual re-identification.
//!
//! The crate covers the whole training and evaluation loop at desk scale:
//!
//! * [`spectral`]: frequency-domain mixed augmentation of a grayscale view.
//! * [`backbone`]: a compact ViT encoder exposing its attention maps.
//! * [`selection`]: class-attention guided top-Z selection of high-frequency tokens.
//! * [`objectives`]: identity, triplet and feature-equilibrium losses.
//! * [`datapipe`]: manifests, identity-disjoint splits, PK sampling, augmentation,
//!   and a procedural dataset generator.
//! * [`evaluator`]: query-vs-rest retrieval metrics (mAP, CMC, mINP).
//! * [`harness`]: configuration, training, checkpoints, sweeps, ablations and
//!   attention-map rendering.

pub mod autograd;
pub mod backbone;
pub mod datapipe;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod objectives;
pub mod params;
pub mod probe;
pub mod raster;
pub mod selection;
pub mod spectral;

pub use error::{Error, Result};
