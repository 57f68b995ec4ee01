pub mod data;
pub mod dsp;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod secost;
pub mod verify;
