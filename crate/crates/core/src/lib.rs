//! Depth-conditioned score distillation texturing for triangle meshes.
//!
//! A fixed mesh is textured by optimizing a multiresolution hash-grid
//! field: each step renders RGB and depth from random viewpoints, noises
//! the render with a DDPM schedule, asks a depth-conditioned noise
//! predictor for its estimate, and pulls the guidance-weighted residual
//! back through the renderer into the field parameters. Closed-form
//! oracles with exact scores stand in for a diffusion model, which keeps
//! every gradient checkable against finite differences.

pub mod config;
pub mod error;
pub mod field;
pub mod guidance;
pub mod img;
pub mod mesh;
pub mod optim;
pub mod pipeline;
pub mod render;

pub use error::{Error, Result};
