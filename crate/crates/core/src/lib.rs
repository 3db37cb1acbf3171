//! Multi-level surface alignment for deformable template meshes.
//!
//! The crate takes a rigged template mesh, a skeletal motion sequence and
//! calibrated multi-view observations, and aligns the template to the observed
//! surface at three levels:
//!
//! * **depth alignment** fits per-frame embedded-graph deformations and vertex
//!   offsets against the observed geometry (Chamfer plus mesh regularizers), with
//!   a per-frame latent that absorbs motion-independent deformation;
//! * **vertex alignment** renders the template, tracks its vertices into the
//!   observed images, lifts the tracks to 3D through depth maps, picks a
//!   per-vertex consensus view and supervises the vertices with the gated targets;
//! * **texel alignment** attaches one Gaussian splat to each covered texel of a
//!   UV-space texture and supervises splat positions the same way, followed by a
//!   residual 2x texel super-resolution.
//!
//! Everything is verified on synthetic scenes ([`synth`]) where ground-truth
//! correspondences are known, so surface drift can be measured directly.

pub mod camera;
pub mod cli;
pub mod container;
pub mod deformation;
pub mod error;
pub mod gaussian;
pub mod kinematics;
pub mod math;
pub mod mesh;
pub mod pipeline;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use math::{Vec2, Vec3};
