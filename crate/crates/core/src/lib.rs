//! Neural parametric surfaces: a piecewise parametric surface built from a
//! learnable feature complex and a shared coordinate network, fitted to
//! segmented 3D shapes.

pub mod complex;
pub mod diffnet;
pub mod error;
pub mod fit;
pub mod geom;
pub mod kdtree;
pub mod layout;
pub mod losses;
pub mod mesher;
pub mod metrics;
pub mod obj;
pub mod sampling;
pub mod synth;

pub use error::{NpsError, Result};
