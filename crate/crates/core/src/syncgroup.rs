//! Registry coordinating synchronized replay starts across instances.
//!
//! Joining a group is a configuration-time action; the trigger fires
//! when any member is set to RUN or receives its first packet while
//! armed. Only the start is synchronized: afterwards every member
//! replays its own timeline independently.

use std::collections::HashMap;

use thiserror::Error;

use crate::instance::{Instance, Stage};

/// Index of an instance within its owning [`crate::emulator::Emulator`].
pub type InstanceId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("instance {instance} already belongs to syncgroup {group}")]
    AlreadyMember { instance: InstanceId, group: u64 },
    #[error("unknown syncgroup {0}")]
    UnknownGroup(u64),
    #[error("syncgroup member {member} is not ready: {reason}")]
    NotReady { member: InstanceId, reason: String },
}

/// Group membership plus the all-or-nothing start trigger.
#[derive(Debug, Clone, Default)]
pub struct SyncGroups {
    members: HashMap<u64, Vec<InstanceId>>,
    group_of: HashMap<InstanceId, u64>,
}

impl SyncGroups {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record membership. Joining the same group again is a no-op;
    /// an instance can belong to at most one group.
    pub fn join(&mut self, group_id: u64, instance: InstanceId) -> Result<(), SyncError> {
        match self.group_of.get(&instance) {
            Some(&g) if g == group_id => Ok(()),
            Some(&g) => Err(SyncError::AlreadyMember {
                instance,
                group: g,
            }),
            None => {
                self.group_of.insert(instance, group_id);
                self.members.entry(group_id).or_default().push(instance);
                Ok(())
            }
        }
    }

    pub fn group_of(&self, instance: InstanceId) -> Option<u64> {
        self.group_of.get(&instance).copied()
    }

    pub fn members(&self, group_id: u64) -> Option<&[InstanceId]> {
        self.members.get(&group_id).map(Vec::as_slice)
    }

    /// Start the replay on every member of `group_id` with an identical
    /// start timestamp. All-or-nothing: if any member is unready (no
    /// timeline ingested, or already finished), no member's stage
    /// changes. Members already in RUN are tolerated and skipped.
    ///
    /// Returns the members that entered RUN by this trigger.
    pub fn trigger_start(
        &self,
        group_id: u64,
        instances: &mut [Instance],
        now_us: u64,
    ) -> Result<Vec<InstanceId>, SyncError> {
        let members = self
            .members
            .get(&group_id)
            .ok_or(SyncError::UnknownGroup(group_id))?;

        for &m in members {
            let inst = &instances[m];
            if inst.stage() == Stage::Run || inst.ready_to_start() {
                continue;
            }
            let reason = if inst.timeline().is_empty() {
                "no trace ingested".to_string()
            } else {
                format!("stage is {}", inst.stage())
            };
            return Err(SyncError::NotReady { member: m, reason });
        }

        let mut started = Vec::new();
        for &m in members {
            if instances[m].stage() != Stage::Run {
                instances[m].begin_run(now_us);
                started.push(m);
            }
        }
        Ok(started)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{ContinueMode, InstanceConfig};

    const TRACE_A: &str = "keep_us,delay_us,rate_bps,loss_prob,q_limit\n1000000,1000,0,0,0\n";
    const TRACE_B: &str =
        "keep_us,delay_us,rate_bps,loss_prob,q_limit\n500000,2000,0,0,0\n500000,3000,0,0,0\n";

    fn member(group: u64, trace: Option<&str>) -> Instance {
        let mut inst = Instance::new(InstanceConfig {
            syncgroup_id: Some(group),
            continue_mode: ContinueMode::Hold,
            ..InstanceConfig::default()
        });
        if let Some(t) = trace {
            inst.ingest(t).unwrap();
        }
        inst
    }

    #[test]
    fn join_is_idempotent_but_exclusive() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        assert_eq!(groups.members(1).unwrap().len(), 2);

        groups.join(1, 0).unwrap(); // same group again: ok
        assert_eq!(groups.members(1).unwrap().len(), 2);

        let err = groups.join(2, 0).unwrap_err();
        assert_eq!(
            err,
            SyncError::AlreadyMember {
                instance: 0,
                group: 1
            }
        );
    }

    #[test]
    fn trigger_starts_all_members_with_the_same_timestamp() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        let mut instances = vec![member(1, Some(TRACE_A)), member(1, Some(TRACE_B))];
        instances[0].request_stage(Stage::Arm, 0).unwrap();
        instances[1].request_stage(Stage::Arm, 0).unwrap();

        let started = groups.trigger_start(1, &mut instances, 42_000).unwrap();
        assert_eq!(started, vec![0, 1]);
        for inst in &instances {
            assert_eq!(inst.stage(), Stage::Run);
            assert_eq!(inst.replay_start_us(), Some(42_000));
        }
    }

    #[test]
    fn unready_member_blocks_the_whole_group() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        let mut instances = vec![member(1, Some(TRACE_A)), member(1, None)];
        instances[0].request_stage(Stage::Arm, 0).unwrap();

        let err = groups.trigger_start(1, &mut instances, 10).unwrap_err();
        assert!(matches!(err, SyncError::NotReady { member: 1, .. }));
        // No stage changed.
        assert_eq!(instances[0].stage(), Stage::Arm);
        assert_eq!(instances[1].stage(), Stage::Load);
    }

    #[test]
    fn finished_member_is_not_ready() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        let mut instances = vec![member(1, Some(TRACE_A)), member(1, Some(TRACE_A))];
        // Drive member 1 to FINISH.
        instances[1].begin_run(0);
        instances[1].advance_cursor(2_000_000);
        assert_eq!(instances[1].stage(), Stage::Finish);

        let err = groups.trigger_start(1, &mut instances, 10).unwrap_err();
        assert!(matches!(err, SyncError::NotReady { member: 1, .. }));
    }

    #[test]
    fn single_member_group_behaves_as_plain_run() {
        let mut groups = SyncGroups::new();
        groups.join(9, 0).unwrap();
        let mut instances = vec![member(9, Some(TRACE_A))];
        let started = groups.trigger_start(9, &mut instances, 5).unwrap();
        assert_eq!(started, vec![0]);
        assert_eq!(instances[0].stage(), Stage::Run);
    }

    #[test]
    fn retrigger_with_running_members_is_idempotent() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        let mut instances = vec![member(1, Some(TRACE_A)), member(1, Some(TRACE_B))];
        groups.trigger_start(1, &mut instances, 100).unwrap();
        let started = groups.trigger_start(1, &mut instances, 999).unwrap();
        assert!(started.is_empty());
        // Original start timestamps preserved.
        assert_eq!(instances[0].replay_start_us(), Some(100));
        assert_eq!(instances[1].replay_start_us(), Some(100));
    }

    #[test]
    fn members_diverge_independently_after_start() {
        let mut groups = SyncGroups::new();
        groups.join(1, 0).unwrap();
        groups.join(1, 1).unwrap();
        let mut instances = vec![member(1, Some(TRACE_A)), member(1, Some(TRACE_B))];
        groups.trigger_start(1, &mut instances, 0).unwrap();

        // At 600 ms, member 0 is still in its single 1 s entry while
        // member 1 has moved to its second 500 ms entry.
        let e0 = instances[0].advance_cursor(600_000).unwrap();
        let e1 = instances[1].advance_cursor(600_000).unwrap();
        assert_eq!(e0.delay_us, 1000);
        assert_eq!(e1.delay_us, 3000);
    }
}
