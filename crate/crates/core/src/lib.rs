//! Geometry and numerics for occupancy-aware bird's-eye-view lifting.
//!
//! The crate covers the non-neural path of a camera-only BEV detector:
//!
//! * [`geom`]: pinhole cameras, rigid transforms, yaw-oriented boxes and
//!   frustum point lattices.
//! * [`occupancy`]: point-level instance occupancy labels generated from
//!   boxes, with a box-frame oracle and a slab ray/box intersector.
//! * [`fusion`]: depth/occupancy weight volumes and their trainable fusion.
//! * [`lift_splat`]: outer-product lifting and deterministic voxel pooling.
//! * [`gfp`]: occupancy-keyed self-attention and the overlap-length identity.
//! * [`losses`]: depth BCE, occupancy focal loss and the weighted total.
//! * [`synth`]: seeded synthetic scenes standing in for a real dataset.
//!
//! Data-parallel kernels use rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Every kernel
//! produces the same bits either way.

// Range checks are written as negated comparisons so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod geom;
pub mod gfp;
pub mod lift_splat;
pub mod losses;
pub mod occupancy;
pub mod par;
pub mod real;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;
