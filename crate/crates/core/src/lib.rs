//! HyperGaussians: Gaussian splatting primitives that live in `m + n`
//! dimensions and are sliced down to splattable attributes by conditioning
//! on an `n`-dimensional latent code.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: Cholesky, triangular solves, quaternions, log-determinants.
//! * [`hypergauss`]: the primitive, its parameterization and pose assembly.
//! * [`conditioning`]: naive (covariance) and fast (precision) conditioning.
//! * [`splat`]: projection, depth sort and front-to-back blending on the CPU.
//! * [`gradients`]: hand-written adjoints and a finite-difference checker.
//! * [`dynafit`]: synthetic dynamic scenes and latent-conditioned fitting.
//! * [`bench`]: naive vs. fast conditioning timings and memory accounting.
//!
//! The guide in `book/` walks through the math; its code listings are
//! compiled as doc-tests of this crate.

pub mod bench;
pub mod conditioning;
pub mod dynafit;
pub mod gradients;
pub mod hypergauss;
pub mod linalg;
pub mod rng;
pub mod splat;

pub use conditioning::{
    condition_batch, condition_fast, condition_naive, condition_primitive, ConditionalResult,
    ConditionedOffsets, DenseJoint,
};
pub use hypergauss::{apply_offsets, splat_covariance, Gaussian3D, HyperGaussianBlock, HyperPrimitive, Partition};
pub use linalg::{LowerTri, Mat};
pub use splat::{rasterize, Camera, Image};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/conditioning.md")]
    struct Conditioning;
    #[doc = include_str!("../../../book/src/rendering.md")]
    struct Rendering;
    #[doc = include_str!("../../../book/src/gradients.md")]
    struct Gradients;
    #[doc = include_str!("../../../book/src/fitting.md")]
    struct Fitting;
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    struct Benchmarking;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
