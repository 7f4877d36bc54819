//! Topology-preserving compression for in-transit isosurface extraction.
//!
//! A producer decomposes a scalar field into blocks, indexes them against a
//! set of candidate isovalues, merges blocks into rectangular regions and
//! compresses every region under an absolute error bound small enough that
//! no marching-cubes cell changes case. A consumer requests an isovalue,
//! receives only the regions that can contain its surface, and extracts a
//! mesh from the reconstruction.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line tool uses.

pub mod blocking;
pub mod bound;
pub mod chr;
pub mod codec;
pub mod error;
pub mod isosurf;
pub mod pipeline;
pub mod scalar;
pub mod volume;

pub use bound::BoundMode;
pub use chr::{build_chr, read_chr, request, write_chr, ChrConfig, RequestOptions};
pub use codec::{Codec, CompressedBlock, LorenzoCodec};
pub use error::{Error, Result};
pub use pipeline::{run_benchmark, simulate_stream, BenchConfig, StreamModel, TimingBreakdown};
pub use scalar::{Dtype, Endian, Real};

pub type Volume = volume::Volume<f64>;
pub type Volume32 = volume::Volume<f32>;
pub type ChrArchive = chr::ChrArchive<f64>;
pub type ChrArchive32 = chr::ChrArchive<f32>;
pub type ReconstructionSet = chr::ReconstructionSet<f64>;
pub type TriangleMesh = isosurf::TriangleMesh<f64>;
pub type DistanceArray = bound::DistanceArray<f64>;
pub type BoundSpec = bound::BoundSpec<f64>;
pub type BlockMeta = blocking::BlockMeta<f64>;
pub type IsoIndex = blocking::IsoIndex<f64>;
