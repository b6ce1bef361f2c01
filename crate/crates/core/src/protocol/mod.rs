//! Wire protocol between the engine and its model backends.
//!
//! Newline-delimited JSON envelopes over a child process's standard streams
//! are the primary transport; the same envelopes can be POSTed over HTTP.

pub mod client;
pub mod message;
pub mod mock;
pub mod server;
pub mod transport;

pub use client::{Client, HmrClient};
pub use message::{
    decode_message, encode_message, BackendKind, Envelope, HandshakeInfo, Message, ProtocolError, WireImage,
    WireMask, PROTOCOL_VERSION,
};
pub use server::{serve_line, serve_stdio, Handler, HttpServer};
pub use transport::{HttpTransport, InProcess, Recorder, StdioTransport, Transcript, Transport, TransportError};
