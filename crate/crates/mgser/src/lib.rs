//! Multi-granularity, multi-level fusion for speech-text emotion
//! recognition, operating on pre-extracted layered embedding stacks and
//! forced-alignment files. Includes a synthetic-data harness so the whole
//! pipeline can be exercised at desk scale.

pub mod cli;
pub mod dataio;
pub mod diffcore;
pub mod granularity;
pub mod models;
pub mod rng;
pub mod training;
