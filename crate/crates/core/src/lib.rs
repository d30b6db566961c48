//! Trace-driven dynamic link emulation.
//!
//! This crate replays timelines of link characteristics (delay, jitter,
//! rate, loss, duplication, queue limits, route ordering) against packet
//! streams. Two backends share the exact same per-packet engine:
//!
//! * [`harness`] runs scenarios on a deterministic virtual clock and
//!   emits plot-ready metrics CSVs;
//! * [`relay`] applies the same instances to live UDP datagrams between
//!   configured endpoints, in wall-clock time.
//!
//! The building blocks are [`trace::Timeline`] (the parsed trace file),
//! [`instance::Instance`] (stage machine, replay cursor and the
//! characteristic pipeline), [`edfq::EdfQueue`] (earliest-deadline-first
//! scheduling with stored transmission durations), and
//! [`emulator::Emulator`] (a set of instances wired by syncgroups).

pub mod edfq;
pub mod emulator;
pub mod harness;
pub mod instance;
pub mod relay;
pub mod rng;
pub mod syncgroup;
pub mod trace;

pub use edfq::{Departure, EdfQueue, ScheduledPacket};
pub use emulator::{Emulator, InstanceId};
pub use instance::{
    ContinueMode, Counters, Disposition, EnqueueOutcome, Instance, InstanceConfig, PacketIn,
    QueueLimitUnit, Stage, StatsSnapshot,
};
pub use rng::EffectsRng;
pub use trace::{Timeline, TraceEntry, TraceError, TraceFormat};
