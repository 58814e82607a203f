//! Tree-based N-body evaluation of the Laplace potential: Barnes-Hut treecodes,
//! list-based FMM and dual tree traversal over a shared octree.

pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod mac;
pub mod traversal;
pub mod tree;
pub mod tuner;

pub use error::{FmmError, Result};
pub use geometry::{generate_distribution, Aabb, Distribution, MortonKey, ParticleSet};
pub use mac::{MacConfig, MacKind};
pub use traversal::{evaluate, EvalConfig, EvalReport, Strategy};
pub use tree::{build_tree, CellShape, CenterMode, Tree, TreeOptions};
pub use tuner::{Choice, Tuner, TunerOptions};
