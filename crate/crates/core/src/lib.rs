//! Interpreting design combinations: given a product image and a short
//! description, identify the *base* component, the *additive* component
//! blended into it, and the relation that explains the blend.

pub mod backends;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod pipeline;
pub mod scenarios;
pub mod taxonomy;
