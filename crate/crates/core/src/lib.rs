//! Conditioning renders and multi-view UV texture baking for turntable
//! videos.
//!
//! A normalized mesh is rendered along a circular orbit into aligned
//! geometry buffers (normal, position, depth, mask). An appearance
//! generator turns those into RGB turntable frames, which are projected
//! back into UV space with visibility ray tests and angle/depth-edge
//! weighting. Further passes rotate the object to expose surface that is
//! still unknown, render partial-texture and inpaint-mask conditioning
//! frames from the current atlas, and fuse the new bake by confidence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod bake;
pub mod camera;
pub mod error;
pub mod fixtures;
pub mod frames;
pub mod fusion;
pub mod generator;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod visibility;

pub use atlas::TextureAtlas;
pub use bake::{BakeConfig, BakeContext, BakeWeights, TexelMap};
pub use camera::{CameraPose, OrbitParams, OrbitTrajectory, Resolution};
pub use error::{Error, GeneratorError, Result};
pub use fusion::{BakePlan, ConfidenceUpdate, CoverageReport};
pub use generator::{AppearanceGenerator, GenerationRequest, GenerationResponse};
pub use mesh::{Rotation, TriangleMesh};
pub use raster::{ColorImage, Raster};
pub use render::GBuffer;
pub use visibility::VisibilityIndex;
