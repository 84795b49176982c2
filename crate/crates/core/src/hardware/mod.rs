//! Cost and scheduling model of the semi-parallel training accelerator, plus a
//! staged emulation of its forward datapath.

mod accelerator;
mod profile;
mod resources;
mod schedule;
mod verify;

pub use accelerator::{truncating_requantize, Requantizer, ScheduledAccelerator, ScheduledRun};
pub use profile::{Board, HardwareProfile, MemoryModel, ResourceCost};
pub use resources::{estimate_resources, memory_brams, ResourceReport, Utilization};
pub use schedule::{
    backward_factor, estimate_training_time, layer_batches, schedule, schedule_backward,
    schedule_forward, CycleReport, ForwardSchedule,
};
pub use verify::{random_trial, verify_model, verify_random, Mismatch, VerifyReport};

use crate::error::Result;
use crate::network::NetworkConfig;

/// Estimators accept a network without layers (an empty core).
fn check_config(cfg: &NetworkConfig) -> Result<()> {
    if cfg.layers.is_empty() {
        Ok(())
    } else {
        cfg.validate()
    }
}
