pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod graph;
pub mod ops;
pub mod network;
pub mod optim;
pub mod searchspace;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Element, Tensor};
