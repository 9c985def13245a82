//! Exact receptive-field analysis and pixel-grounded prototypical-part inference.

pub mod cli;
pub mod fixtures;
pub mod graph;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pixel_mapping;
pub mod protopart;
pub mod rf;
pub mod slices;
pub mod tensor;
