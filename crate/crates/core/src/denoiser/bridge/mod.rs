//! Client and in-process server for the binary bridge protocol that carries
//! denoiser and codec calls to an external model process.

mod client;
pub mod protocol;
mod server;

pub use client::{BridgeCodec, BridgeDenoiser, BridgeSession, SharedSession};
pub use protocol::{Frame, InitAck, InitRequest, MsgType, PredictRequest, Tensor};
pub use server::{serve, spawn_tcp, BridgeHandler, LoopbackHandler, SessionEnd};
