//! Dense tensors with reverse-mode differentiation, the op set the fusion
//! network needs, and a momentum-SGD optimizer.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod real;
pub mod suite;


pub use graph::{BinOp, Graph, TensorError, TensorId, UnOp};
pub use params::{he_init, uniform_init, Param, ParamGroup, ParamStore, SgdConfig};
pub use real::Real;
