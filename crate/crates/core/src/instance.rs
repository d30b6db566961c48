//! The per-link emulator instance.
//!
//! An instance owns one timeline, one EDF queue, and one RNG stream.
//! It moves through the operational stages (LOAD, ARM, RUN, FINISH,
//! CLEAR-as-command), advances the replay cursor on packet arrival, and
//! applies the full characteristic pipeline to every packet it accepts:
//! segmentation, loss, delay with jitter, rate, route ordering, queue
//! limits and duplication.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edfq::{Departure, EdfQueue, ScheduledPacket};
use crate::rng::{scaled_prob_triggers, EffectsRng};
use crate::trace::{Timeline, TraceEntry, TraceError, TraceFormat};

/// Operational stage of an instance. `Clear` is a command, not a
/// resident state: requesting it empties the instance and lands in
/// `Load`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Load,
    Arm,
    Run,
    Finish,
    Clear,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "LOAD",
            Stage::Arm => "ARM",
            Stage::Run => "RUN",
            Stage::Finish => "FINISH",
            Stage::Clear => "CLEAR",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LOAD" => Ok(Stage::Load),
            "ARM" => Ok(Stage::Arm),
            "RUN" => Ok(Stage::Run),
            "FINISH" => Ok(Stage::Finish),
            "CLEAR" => Ok(Stage::Clear),
            other => Err(format!("unknown stage \"{other}\"")),
        }
    }
}

/// What happens when the replay reaches the end of the timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContinueMode {
    /// Keep the last entry applied; stage becomes FINISH.
    #[default]
    Hold,
    /// Behave transparently again; stage becomes FINISH.
    Clean,
    /// Restart at offset zero and stay in RUN.
    Loop,
}

impl FromStr for ContinueMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HOLD" => Ok(ContinueMode::Hold),
            "CLEAN" => Ok(ContinueMode::Clean),
            "LOOP" => Ok(ContinueMode::Loop),
            other => Err(format!("unknown continue mode \"{other}\"")),
        }
    }
}

/// Unit in which per-entry queue limits are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueueLimitUnit {
    Bytes,
    #[default]
    Packets,
}

impl FromStr for QueueLimitUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BYTES" => Ok(QueueLimitUnit::Bytes),
            "PACKETS" => Ok(QueueLimitUnit::Packets),
            other => Err(format!("unknown queue limit unit \"{other}\"")),
        }
    }
}

/// Fixed per-instance setup, chosen before any traffic flows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub ingest_format: TraceFormat,
    pub continue_mode: ContinueMode,
    pub queue_limit_unit: QueueLimitUnit,
    /// Static overhead added to every packet's wire size (encapsulation).
    pub overhead_bytes: u64,
    /// Packets larger than this are segmented; 0 disables segmentation.
    pub segment_size_bytes: u64,
    pub rng_seed: u64,
    pub syncgroup_id: Option<u64>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            ingest_format: TraceFormat::Simple,
            continue_mode: ContinueMode::Hold,
            queue_limit_unit: QueueLimitUnit::Packets,
            overhead_bytes: 0,
            segment_size_bytes: 0,
            rng_seed: 0,
            syncgroup_id: None,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.segment_size_bytes != 0 && self.segment_size_bytes < 64 {
            return Err(ConfigError::SegmentSizeTooSmall {
                value: self.segment_size_bytes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("segment_size_bytes must be 0 or >= 64, got {value}")]
    SegmentSizeTooSmall { value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageError {
    #[error("illegal stage transition {from} -> {requested}")]
    IllegalTransition { from: Stage, requested: Stage },
    #[error("not ready: {reason}")]
    NotReady { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("trace ingest is only permitted in LOAD stage (currently {stage})")]
    WrongStage { stage: Stage },
    #[error(transparent)]
    Parse(#[from] TraceError),
}

/// Monotonically non-decreasing outcome counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Packets offered to enqueue, before segmentation.
    pub received: u64,
    /// Packets (or segments) that departed the queue.
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_queue: u64,
    /// Duplicates created by the duplication draw.
    pub duplicated: u64,
    /// Extra segments created by splitting oversized packets.
    pub segmented: u64,
}

/// A packet handed to the instance.
#[derive(Debug, Clone, Copy)]
pub struct PacketIn {
    pub payload_size_bytes: u64,
    pub arrival_us: u64,
    /// Opaque caller metadata, copied to every segment and duplicate.
    pub flow_tag: u64,
}

/// Fate of one segment (or duplicate) in the enqueue pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Enqueued(ScheduledPacket),
    DroppedLoss,
    DroppedQueue,
}

/// Per-segment result of an enqueue call. `payload_offset_bytes` and
/// `payload_len_bytes` locate the segment within the original payload
/// so callers relaying real datagrams can slice them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnqueueOutcome {
    pub duplicate: bool,
    pub payload_offset_bytes: u64,
    pub payload_len_bytes: u64,
    pub wire_size_bytes: u64,
    pub disposition: Disposition,
}

/// Read-only view of an instance's runtime state.
#[derive(Debug, Clone, Serialize)]
pub struct StatsSnapshot {
    pub stage: Stage,
    pub replay_start_us: Option<u64>,
    /// Cursor position as of the last processed packet.
    pub active_index: Option<usize>,
    pub active_entry: Option<TraceEntry>,
    pub timeline_entries: usize,
    pub timeline_total_us: u64,
    pub counters: Counters,
    pub queued_packets: u64,
    pub queued_bytes: u64,
}

// TraceEntry appears in stats output.
impl Serialize for TraceEntry {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("TraceEntry", 9)?;
        s.serialize_field("keep_us", &self.keep_us)?;
        s.serialize_field("delay_us", &self.delay_us)?;
        s.serialize_field("jitter_us", &self.jitter_us)?;
        s.serialize_field("rate_bps", &self.rate_bps)?;
        s.serialize_field("loss_prob", &self.loss_prob)?;
        s.serialize_field("dup_prob", &self.dup_prob)?;
        s.serialize_field("dup_delay_us", &self.dup_delay_us)?;
        s.serialize_field("q_limit", &self.q_limit)?;
        s.serialize_field("route_id", &self.route_id)?;
        s.end()
    }
}

/// Serialization time of `wire_size_bytes` at `rate_bps`, rounded up to
/// whole microseconds. Zero rate means no limit and zero duration.
pub fn tx_duration_us(wire_size_bytes: u64, rate_bps: u64) -> u64 {
    if rate_bps == 0 {
        return 0;
    }
    let bits = wire_size_bytes as u128 * 8 * 1_000_000;
    ((bits + rate_bps as u128 - 1) / rate_bps as u128) as u64
}

/// One emulated link.
#[derive(Debug)]
pub struct Instance {
    config: InstanceConfig,
    timeline: Timeline,
    stage: Stage,
    replay_start_us: Option<u64>,
    active_index: Option<usize>,
    counters: Counters,
    queue: EdfQueue,
    rng: EffectsRng,
    next_seq: u64,
}

impl Instance {
    pub fn new(config: InstanceConfig) -> Self {
        let rng = EffectsRng::new(config.rng_seed);
        Self {
            config,
            timeline: Timeline::new(),
            stage: Stage::Load,
            replay_start_us: None,
            active_index: None,
            counters: Counters::default(),
            queue: EdfQueue::new(),
            rng,
            next_seq: 0,
        }
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn replay_start_us(&self) -> Option<u64> {
        self.replay_start_us
    }

    /// Append trace text in the configured format. Only legal in LOAD.
    pub fn ingest(&mut self, text: &str) -> Result<usize, IngestError> {
        if self.stage != Stage::Load {
            return Err(IngestError::WrongStage { stage: self.stage });
        }
        Ok(self.timeline.append(text, self.config.ingest_format)?)
    }

    /// Whether a (group) start may begin the replay on this instance.
    pub fn ready_to_start(&self) -> bool {
        matches!(self.stage, Stage::Load | Stage::Arm) && !self.timeline.is_empty()
    }

    /// Enter RUN at `now_us`. Idempotent when already running.
    pub(crate) fn begin_run(&mut self, now_us: u64) {
        if self.stage == Stage::Run {
            return;
        }
        self.stage = Stage::Run;
        self.replay_start_us = Some(now_us);
        self.active_index = Some(0);
    }

    /// Request a stage change, enforcing the legal transition set.
    /// SyncGroup members must be driven through the registry so RUN
    /// requests propagate; this method implements the solo semantics.
    pub fn request_stage(&mut self, requested: Stage, now_us: u64) -> Result<Stage, StageError> {
        use Stage::*;
        match (self.stage, requested) {
            (s, r) if s == r && r != Clear => Ok(s),
            (Load, Arm) => {
                if self.timeline.is_empty() {
                    Err(StageError::NotReady {
                        reason: "cannot arm with an empty timeline".to_string(),
                    })
                } else {
                    self.stage = Arm;
                    Ok(Arm)
                }
            }
            (Load, Run) | (Arm, Run) => {
                if self.timeline.is_empty() {
                    Err(StageError::NotReady {
                        reason: "cannot run with an empty timeline".to_string(),
                    })
                } else {
                    self.begin_run(now_us);
                    Ok(Run)
                }
            }
            (Load, Clear) | (Finish, Clear) => {
                self.clear_all();
                Ok(Load)
            }
            (Arm, Load) | (Run, Load) | (Finish, Load) => {
                // Manual stop keeps the timeline, so more entries can
                // be appended; the replay cursor is discarded.
                self.stage = Load;
                self.replay_start_us = None;
                self.active_index = None;
                Ok(Load)
            }
            (from, requested) => Err(StageError::IllegalTransition { from, requested }),
        }
    }

    /// CLEAR: drop the timeline, queue, cursor and counters, re-seed
    /// the RNG, and land in LOAD, as if freshly configured.
    fn clear_all(&mut self) {
        self.timeline = Timeline::new();
        self.stage = Stage::Load;
        self.replay_start_us = None;
        self.active_index = None;
        self.counters = Counters::default();
        self.queue = EdfQueue::new();
        self.rng = EffectsRng::new(self.config.rng_seed);
        self.next_seq = 0;
    }

    /// Resolve the entry active at `now_us`, handling timeline end per
    /// the continue mode. `None` means the instance is transparent.
    /// Only meaningful in RUN or FINISH.
    pub fn advance_cursor(&mut self, now_us: u64) -> Option<TraceEntry> {
        let start = self.replay_start_us?;
        if self.stage == Stage::Finish {
            return match self.config.continue_mode {
                ContinueMode::Hold => {
                    let idx = self.timeline.len() - 1;
                    self.active_index = Some(idx);
                    Some(self.timeline.entries()[idx])
                }
                ContinueMode::Clean => None,
                // LOOP never enters FINISH.
                ContinueMode::Loop => None,
            };
        }
        let offset = now_us.saturating_sub(start);
        let total = self.timeline.total_duration_us();
        if offset < total {
            let idx = self
                .timeline
                .entry_at_offset(offset)
                .expect("RUN implies non-empty timeline")
                .expect("offset < total");
            self.active_index = Some(idx);
            return Some(self.timeline.entries()[idx]);
        }
        match self.config.continue_mode {
            ContinueMode::Hold => {
                self.stage = Stage::Finish;
                let idx = self.timeline.len() - 1;
                self.active_index = Some(idx);
                Some(self.timeline.entries()[idx])
            }
            ContinueMode::Clean => {
                self.stage = Stage::Finish;
                self.active_index = None;
                None
            }
            ContinueMode::Loop => {
                // Modulo arithmetic replaces a full list walk on wrap.
                let idx = self
                    .timeline
                    .entry_at_offset(offset % total)
                    .expect("non-empty")
                    .expect("offset % total < total");
                self.active_index = Some(idx);
                Some(self.timeline.entries()[idx])
            }
        }
    }

    /// Run the enqueue pipeline for one packet. All stages accept
    /// packets; outside an active replay they pass through transparently.
    ///
    /// A solo instance in ARM starts its replay with this packet and
    /// emulates it under entry 0. A grouped instance in ARM must have
    /// its group triggered by the caller first; if it is still armed
    /// here (group not ready) the packet passes through transparently.
    pub fn enqueue(&mut self, pkt: PacketIn) -> Vec<EnqueueOutcome> {
        self.counters.received += 1;
        let entry = match self.stage {
            Stage::Load | Stage::Clear => None,
            Stage::Arm => {
                if self.config.syncgroup_id.is_some() {
                    None
                } else {
                    self.begin_run(pkt.arrival_us);
                    self.advance_cursor(pkt.arrival_us)
                }
            }
            Stage::Run | Stage::Finish => self.advance_cursor(pkt.arrival_us),
        };
        match entry {
            None => vec![self.enqueue_transparent(pkt)],
            Some(e) => self.enqueue_under_entry(pkt, e),
        }
    }

    fn enqueue_transparent(&mut self, pkt: PacketIn) -> EnqueueOutcome {
        let wire = pkt.payload_size_bytes + self.config.overhead_bytes;
        let seq = self.take_seq();
        let packet = ScheduledPacket {
            deadline_us: pkt.arrival_us,
            tx_duration_us: 0,
            wire_size_bytes: wire,
            route_id: 0,
            seq,
            flow_tag: pkt.flow_tag,
        };
        self.queue.push(packet);
        EnqueueOutcome {
            duplicate: false,
            payload_offset_bytes: 0,
            payload_len_bytes: pkt.payload_size_bytes,
            wire_size_bytes: wire,
            disposition: Disposition::Enqueued(packet),
        }
    }

    fn enqueue_under_entry(&mut self, pkt: PacketIn, entry: TraceEntry) -> Vec<EnqueueOutcome> {
        let mut outcomes = Vec::new();
        let seg = self.config.segment_size_bytes;
        if seg > 0 && pkt.payload_size_bytes > seg {
            let mut offset = 0;
            while offset < pkt.payload_size_bytes {
                let len = (pkt.payload_size_bytes - offset).min(seg);
                self.process_segment(pkt.arrival_us, pkt.flow_tag, offset, len, entry, &mut outcomes);
                offset += len;
            }
            self.counters.segmented += pkt.payload_size_bytes.div_ceil(seg) - 1;
        } else {
            self.process_segment(
                pkt.arrival_us,
                pkt.flow_tag,
                0,
                pkt.payload_size_bytes,
                entry,
                &mut outcomes,
            );
        }
        outcomes
    }

    /// Steps 4-9 of the pipeline for one segment: loss, delay, rate,
    /// route ordering, queue limit, duplication.
    fn process_segment(
        &mut self,
        arrival_us: u64,
        flow_tag: u64,
        payload_offset: u64,
        payload_len: u64,
        entry: TraceEntry,
        outcomes: &mut Vec<EnqueueOutcome>,
    ) {
        let wire = payload_len + self.config.overhead_bytes;

        let loss_draw = self.rng.draw_loss();
        if scaled_prob_triggers(entry.loss_prob, loss_draw) {
            self.counters.dropped_loss += 1;
            outcomes.push(EnqueueOutcome {
                duplicate: false,
                payload_offset_bytes: payload_offset,
                payload_len_bytes: payload_len,
                wire_size_bytes: wire,
                disposition: Disposition::DroppedLoss,
            });
            return;
        }

        let delay = self.rng.sample_jitter(entry.delay_us, entry.jitter_us);
        let deadline = arrival_us.saturating_add(delay);
        let tx = tx_duration_us(wire, entry.rate_bps);

        let original =
            self.admit(deadline, tx, wire, entry, flow_tag, false, payload_offset, payload_len);
        outcomes.push(original);

        // Duplication is evaluated per segment. The duplicate inherits
        // the original's (route-ordered) deadline plus the offset and
        // runs its own route ordering and queue limit check.
        let dup_draw = self.rng.draw_duplication();
        if scaled_prob_triggers(entry.dup_prob, dup_draw) {
            self.counters.duplicated += 1;
            let base = match original.disposition {
                Disposition::Enqueued(p) => p.deadline_us,
                _ => deadline,
            };
            let dup_deadline = base.saturating_add(entry.dup_delay_us);
            let dup =
                self.admit(dup_deadline, tx, wire, entry, flow_tag, true, payload_offset, payload_len);
            outcomes.push(dup);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn admit(
        &mut self,
        deadline_us: u64,
        tx: u64,
        wire: u64,
        entry: TraceEntry,
        flow_tag: u64,
        duplicate: bool,
        payload_offset: u64,
        payload_len: u64,
    ) -> EnqueueOutcome {
        let deadline = self.queue.apply_route_order(entry.route_id, deadline_us);
        if entry.q_limit != 0 {
            let exceeds = match self.config.queue_limit_unit {
                QueueLimitUnit::Bytes => self.queue.size_bytes() + wire > entry.q_limit,
                QueueLimitUnit::Packets => self.queue.size_packets() + 1 > entry.q_limit,
            };
            if exceeds {
                self.counters.dropped_queue += 1;
                return EnqueueOutcome {
                    duplicate,
                    payload_offset_bytes: payload_offset,
                    payload_len_bytes: payload_len,
                    wire_size_bytes: wire,
                    disposition: Disposition::DroppedQueue,
                };
            }
        }
        let seq = self.take_seq();
        let packet = ScheduledPacket {
            deadline_us: deadline,
            tx_duration_us: tx,
            wire_size_bytes: wire,
            route_id: entry.route_id,
            seq,
            flow_tag,
        };
        self.queue.push(packet);
        EnqueueOutcome {
            duplicate,
            payload_offset_bytes: payload_offset,
            payload_len_bytes: payload_len,
            wire_size_bytes: wire,
            disposition: Disposition::Enqueued(packet),
        }
    }

    fn take_seq(&mut self) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    /// Earliest time a departure can happen; `None` while the queue is
    /// empty.
    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.next_event_time()
    }

    /// Dequeue the next due packet at `now_us`, if any.
    pub fn pop_due(&mut self, now_us: u64) -> Option<Departure> {
        let departure = self.queue.pop_due(now_us)?;
        self.counters.delivered += 1;
        Some(departure)
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            stage: self.stage,
            replay_start_us: self.replay_start_us,
            active_index: self.active_index,
            active_entry: self.active_index.map(|i| self.timeline.entries()[i]),
            timeline_entries: self.timeline.len(),
            timeline_total_us: self.timeline.total_duration_us(),
            counters: self.counters,
            queued_packets: self.queue.size_packets(),
            queued_bytes: self.queue.size_bytes(),
        }
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }
}
