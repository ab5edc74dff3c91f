pub mod augment;
pub mod balance;
pub mod csvio;
pub mod error;
pub mod features;
pub mod mat;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod store;
pub mod synth;
pub mod table;
pub mod targets;
pub mod train;
