//! Pseudo-label generation for 3D object detection, at desk scale.
//!
//! The pipeline takes noisy detections of oriented 3D boxes, merges
//! predictions from multiple fixed augmented views (and optionally from
//! multiple detector checkpoints) back into a canonical frame, fuses the
//! resulting seed boxes by clustering and learned box voting, and scores
//! the survivors so that a plain confidence cut yields clean pseudo
//! labels. A seeded synthetic-scene simulator stands in for a real LiDAR
//! detector so the recall/precision behaviour of every stage is
//! reproducible and testable.
//!
//! Module map:
//! - [`geom3d`] — oriented-box geometry: transforms, rotated IoU, NMS
//! - [`detsim`] — synthetic scenes and the seeded noisy detector
//! - [`ensemble`] — fixed-view generation and seed-box collection
//! - [`cbv`] — clustering, RoI features, vote network, aggregation
//! - [`bcl`] — box feature interpolation, matching, InfoNCE
//! - [`eval`] — recall/precision matching and threshold sweeps
//! - [`tinynet`] — dense two-layer nets, losses, exact backprop
//! - [`cli`] — experiment runner used by the `pseudolab` binary

pub mod bcl;
pub mod cbv;
pub mod cli;
pub mod detsim;
pub mod ensemble;
pub mod eval;
pub mod geom3d;
pub mod tinynet;

pub(crate) mod blob;

pub use detsim::{DetectorHandle, NoiseModel, Scene, SceneConfig};
pub use ensemble::{EnsembleConfig, SeedBoxSet};
pub use geom3d::{Box3D, ClassId, Detection, ViewTransform};
