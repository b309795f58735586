//! Peer-to-peer exchange: wire codec, event simulation and a TCP adapter.

pub mod codec;
pub mod sim;
pub mod tcp;

pub use codec::{decode_message, encode_message, FrameDecoder, Message, MessageType};
pub use sim::{
    build_default_schedule, run_simulation, ScheduleConfig, ScheduleKind, ScheduledEvent, SimClient, SimConfig,
    SimOutcome, SimStats, Topology, TraceRecord,
};
