//! Semantic data slicing: turn a slicing criterion into an LLM-backed
//! slicing function, apply it to a text dataset, and evaluate the slices.

pub mod artifact;
pub mod backend;
pub mod corpus;
pub mod eval;
pub mod promptgen;
pub mod runconfig;
pub mod sampler;
pub mod slicer;
pub mod usage;
