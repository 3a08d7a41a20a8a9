//! Sum-product networks with piecewise-polynomial leaves, learned from mixed
//! discrete/continuous data, with probabilistic queries answered by weighted model
//! integration over the network's propositional abstraction.

pub mod bench;
pub mod binning;
pub mod data;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod polyfit;
pub mod query;
pub mod spn;
pub mod structure;
pub mod synth;
pub mod wmi;

pub use error::{Error, Result};
