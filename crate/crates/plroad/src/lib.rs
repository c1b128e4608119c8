pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod distill;
pub mod io;
pub mod ipps;
pub mod metrics;
pub mod net;
pub mod pl;
pub mod scene;
pub mod tensor;
pub mod train;
