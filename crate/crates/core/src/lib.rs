//! Short-circuit, load-flow and overcurrent relay coordination studies for
//! radial distribution networks with embedded generation.

// input checks are written as `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coordination;
pub mod loadflow;
pub mod netmodel;
pub mod relay;
pub mod report;
pub mod shortcircuit;
pub mod strategy;
