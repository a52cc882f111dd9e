pub mod ad;
pub mod cli;
pub mod cluster;
pub mod deform;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod math;
pub mod loss;
pub mod io;
pub mod optim;
pub mod scenegen;
pub mod seg;
pub mod store;
pub mod track;
