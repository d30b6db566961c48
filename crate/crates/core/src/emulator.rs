//! Owner of a set of emulator instances plus their syncgroup registry.
//!
//! Both backends (the virtual-time harness and the live relay) drive
//! their instances through this type, so the stage propagation and
//! ARM-first-packet semantics are identical in simulation and live
//! operation. All operations on one emulator are caller-serialized.

use thiserror::Error;

use crate::edfq::Departure;
use crate::instance::{
    ConfigError, EnqueueOutcome, IngestError, Instance, InstanceConfig, PacketIn, Stage,
    StageError, StatsSnapshot,
};
use crate::syncgroup::{SyncError, SyncGroups};

pub use crate::syncgroup::InstanceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmulatorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sync(#[from] SyncError),
}

#[derive(Debug, Default)]
pub struct Emulator {
    instances: Vec<Instance>,
    groups: SyncGroups,
}

impl Emulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create an instance and register its syncgroup membership.
    pub fn add_instance(&mut self, config: InstanceConfig) -> Result<InstanceId, EmulatorError> {
        config.validate()?;
        let id = self.instances.len();
        if let Some(group) = config.syncgroup_id {
            self.groups.join(group, id)?;
        }
        self.instances.push(Instance::new(config));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, id: InstanceId) -> &Instance {
        &self.instances[id]
    }

    pub fn ingest(&mut self, id: InstanceId, text: &str) -> Result<usize, IngestError> {
        self.instances[id].ingest(text)
    }

    /// Request a stage change. A RUN request on a syncgroup member
    /// triggers the whole group, all-or-nothing; everything else is
    /// per-instance.
    pub fn set_stage(
        &mut self,
        id: InstanceId,
        requested: Stage,
        now_us: u64,
    ) -> Result<Stage, StageError> {
        if requested == Stage::Run {
            if let Some(group) = self.groups.group_of(id) {
                return match self.groups.trigger_start(group, &mut self.instances, now_us) {
                    Ok(_) => Ok(Stage::Run),
                    Err(e) => Err(StageError::NotReady {
                        reason: e.to_string(),
                    }),
                };
            }
        }
        self.instances[id].request_stage(requested, now_us)
    }

    /// Enqueue one packet. If the target instance is armed and grouped,
    /// the first packet triggers the synchronized group start before
    /// the packet itself is processed; when the group is not ready the
    /// instance stays armed and the packet passes through transparently.
    pub fn enqueue(&mut self, id: InstanceId, pkt: PacketIn) -> Vec<EnqueueOutcome> {
        if self.instances[id].stage() == Stage::Arm {
            if let Some(group) = self.groups.group_of(id) {
                let _ = self
                    .groups
                    .trigger_start(group, &mut self.instances, pkt.arrival_us);
            }
        }
        self.instances[id].enqueue(pkt)
    }

    pub fn next_event_time(&self, id: InstanceId) -> Option<u64> {
        self.instances[id].next_event_time()
    }

    /// Earliest pending departure across all instances.
    pub fn earliest_event(&self) -> Option<(u64, InstanceId)> {
        self.instances
            .iter()
            .enumerate()
            .filter_map(|(id, inst)| inst.next_event_time().map(|t| (t, id)))
            .min()
    }

    pub fn pop_due(&mut self, id: InstanceId, now_us: u64) -> Option<Departure> {
        self.instances[id].pop_due(now_us)
    }

    pub fn stats(&self, id: InstanceId) -> StatsSnapshot {
        self.instances[id].stats()
    }
}
