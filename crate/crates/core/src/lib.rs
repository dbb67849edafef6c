//! Real-to-sim urban scene synthesis.
//!
//! The pipeline has three stages plus evaluation:
//!
//! 1. [`fusion`] distills per-frame perception outputs (depth, instance
//!    masks, embeddings) into a [`scenegraph::SceneGraph`].
//! 2. [`retrieval`] matches every graph node against an annotated asset
//!    catalog and keeps the top-k "digital cousins".
//! 3. [`assembly`] turns a selection into k physics-annotated, penetration
//!    free scene descriptions.
//!
//! [`evaluation`] scores reconstructions and scaling fits, and [`navsim`]
//! is a small kinematic navigation harness over assembled scenes.

pub mod assembly;
pub mod canonical;
pub mod color;
pub mod embed;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod mask;
pub mod navsim;
pub mod provenance;
pub mod raster;
pub mod retrieval;
pub mod scenegraph;
pub mod synth;

pub use geometry::{Vec2, Vec3};
