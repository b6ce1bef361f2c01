//! Server side of the protocol: anything implementing [`Handler`] can be
//! served in-process, over stdio, or over HTTP.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use super::message::{decode_message, encode_message, Envelope, Message, ProtocolError};

pub trait Handler: Send {
    fn handle(&mut self, request_id: u64, message: Message) -> Message;
}

fn error_code(err: &ProtocolError) -> &'static str {
    match err {
        ProtocolError::MalformedJson(_) => "malformed_json",
        ProtocolError::UnknownType(_) => "unknown_type",
        ProtocolError::VersionMismatch { .. } => "version_mismatch",
        ProtocolError::UnencodableValue(_) => "unencodable",
        ProtocolError::InvalidBody { .. } => "invalid_body",
    }
}

/// Decodes one request line, dispatches it and encodes the response line.
pub fn serve_line<H: Handler + ?Sized>(handler: &mut H, line: &[u8]) -> Vec<u8> {
    let (request_id, response) = match decode_message(line) {
        Ok(env) => (env.request_id, handler.handle(env.request_id, env.message)),
        Err(e) => {
            let id = serde_json::from_slice::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("request_id").and_then(|r| r.as_u64()))
                .unwrap_or(0);
            (id, Message::error(error_code(&e), e.to_string()))
        }
    };
    match encode_message(&Envelope::new(request_id, response)) {
        Ok(bytes) => bytes,
        Err(e) => encode_message(&Envelope::new(request_id, Message::error(error_code(&e), e.to_string())))
            .expect("error envelopes always encode"),
    }
}

/// Serves requests until the reader hits end of input.
pub fn serve_stdio<H: Handler + ?Sized>(
    handler: &mut H,
    mut reader: impl BufRead,
    mut writer: impl Write,
) -> std::io::Result<()> {
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(());
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        writer.write_all(&serve_line(handler, &line))?;
        writer.flush()?;
    }
}

/// A handler served over HTTP on a background thread; stops on drop.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn bind<H: Handler + 'static>(addr: &str, mut handler: H) -> std::io::Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(std::io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an ip listener"))?;
        let srv = Arc::clone(&server);
        let thread = std::thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let mut body = Vec::new();
                let reply = match request.as_reader().read_to_end(&mut body) {
                    Ok(_) => serve_line(&mut handler, &body),
                    Err(e) => serve_line(&mut handler, e.to_string().as_bytes()),
                };
                let header = tiny_http::Header::from_bytes("content-type", "application/json").unwrap();
                let _ = request.respond(tiny_http::Response::from_data(reply).with_header(header));
            }
        });
        Ok(Self {
            server,
            addr,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
