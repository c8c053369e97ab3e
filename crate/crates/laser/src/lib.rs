//! Replay, concurrent agents and the experiment harness on top of
//! `laser-core`.

pub mod agent;
pub mod experiments;
pub mod formats;
pub mod replay;
pub mod verify;
