//! Distributed dynamic spectrum access over a TDMA super-frame: cooperative
//! energy-detection sensing, majority fusion and priority-based
//! channel/slot allocation, driven by a deterministic virtual-time simulator.

pub mod experiment;
pub mod metrics;
pub mod nodes;
pub mod psa;
pub mod scenario;
pub mod sensing;
pub mod sim;
pub mod types;
pub mod wire;
