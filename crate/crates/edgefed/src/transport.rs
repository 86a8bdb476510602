//! Length-prefixed binary message framing between client and server roles,
//! over TCP sockets or an in-process byte channel with identical framing.
//!
//! Frame layout (all integers little-endian):
//! version(1) | msg_type(1) | round(4) | client_id(4) | payload_len(4) | payload

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const DEFAULT_MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("frame truncated: {missing} more bytes needed")]
    Truncated { missing: usize },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    Oversize { len: usize, max: usize },
    #[error("endpoint {0:?} is not host:port or inproc[:name]")]
    BadEndpoint(String),
    #[error("inproc endpoint {0:?} has no listener")]
    NoListener(String),
    #[error("channel closed")]
    Closed,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    KeyBcast = 1,
    ModelBcast = 2,
    UpdateBin = 3,
    UpdateEnc = 4,
    UpdateFull = 5,
    RoundAck = 6,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self, TransportError> {
        Ok(match v {
            1 => MsgType::KeyBcast,
            2 => MsgType::ModelBcast,
            3 => MsgType::UpdateBin,
            4 => MsgType::UpdateEnc,
            5 => MsgType::UpdateFull,
            6 => MsgType::RoundAck,
            other => return Err(TransportError::UnknownMsgType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MsgType,
    pub round: u32,
    pub client_id: u32,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MsgType, round: u32, client_id: u32, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            round,
            client_id,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(PROTOCOL_VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the start of `buf`, returning the message and
    /// the bytes consumed. Truncation errors name the missing byte count.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), TransportError> {
        if buf.len() < HEADER_LEN {
            return Err(TransportError::Truncated {
                missing: HEADER_LEN - buf.len(),
            });
        }
        if buf[0] != PROTOCOL_VERSION {
            return Err(TransportError::BadVersion(buf[0]));
        }
        let msg_type = MsgType::from_u8(buf[1])?;
        let round = u32::from_le_bytes(buf[2..6].try_into().unwrap());
        let client_id = u32::from_le_bytes(buf[6..10].try_into().unwrap());
        let payload_len = u32::from_le_bytes(buf[10..14].try_into().unwrap()) as usize;
        let total = HEADER_LEN + payload_len;
        if buf.len() < total {
            return Err(TransportError::Truncated {
                missing: total - buf.len(),
            });
        }
        Ok((
            Self {
                msg_type,
                round,
                client_id,
                payload: buf[HEADER_LEN..total].to_vec(),
            },
            total,
        ))
    }
}

#[cfg(not(target_arch = "wasm32"))]
pub use sessions::{connect, serve, Server, Session};

#[cfg(not(target_arch = "wasm32"))]
mod sessions {
    use super::*;
    use std::collections::HashMap;
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::mpsc::{Receiver, Sender, SyncSender};
    use std::sync::{Arc, Mutex, OnceLock};

    /// Byte-oriented duplex used by both transports so frames are identical
    /// on the wire.
    enum Stream {
        Tcp(TcpStream),
        Inproc {
            tx: SyncSender<Vec<u8>>,
            rx: Receiver<Vec<u8>>,
            buf: Vec<u8>,
        },
    }

    impl Stream {
        fn write_all_bytes(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
            match self {
                Stream::Tcp(s) => {
                    s.write_all(bytes)?;
                    Ok(())
                }
                Stream::Inproc { tx, .. } => tx
                    .send(bytes.to_vec())
                    .map_err(|_| TransportError::Closed),
            }
        }

        fn read_exact_bytes(&mut self, out: &mut [u8]) -> Result<(), TransportError> {
            match self {
                Stream::Tcp(s) => {
                    s.read_exact(out)?;
                    Ok(())
                }
                Stream::Inproc { rx, buf, .. } => {
                    while buf.len() < out.len() {
                        let chunk = rx.recv().map_err(|_| TransportError::Closed)?;
                        buf.extend_from_slice(&chunk);
                    }
                    out.copy_from_slice(&buf[..out.len()]);
                    buf.drain(..out.len());
                    Ok(())
                }
            }
        }
    }

    /// One logical connection. Tracks raw bytes in each direction so wire
    /// accounting can be verified against a live exchange.
    pub struct Session {
        stream: Stream,
        max_frame: usize,
        bytes_sent: u64,
        bytes_received: u64,
    }

    impl Session {
        pub fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
            let bytes = msg.encode();
            if bytes.len() > self.max_frame {
                return Err(TransportError::Oversize {
                    len: bytes.len(),
                    max: self.max_frame,
                });
            }
            self.stream.write_all_bytes(&bytes)?;
            self.bytes_sent += bytes.len() as u64;
            Ok(())
        }

        pub fn recv(&mut self) -> Result<Message, TransportError> {
            let mut header = [0u8; HEADER_LEN];
            self.stream.read_exact_bytes(&mut header)?;
            // validate header before trusting payload_len
            let payload_len = match Message::decode(&header) {
                Ok(_) => 0, // empty-payload frame decoded entirely
                Err(TransportError::Truncated { missing }) => missing,
                Err(e) => return Err(e),
            };
            let total = HEADER_LEN + payload_len;
            if total > self.max_frame {
                return Err(TransportError::Oversize {
                    len: total,
                    max: self.max_frame,
                });
            }
            let mut frame = header.to_vec();
            frame.resize(total, 0);
            self.stream.read_exact_bytes(&mut frame[HEADER_LEN..])?;
            self.bytes_received += total as u64;
            let (msg, _) = Message::decode(&frame)?;
            Ok(msg)
        }

        pub fn bytes_sent(&self) -> u64 {
            self.bytes_sent
        }

        pub fn bytes_received(&self) -> u64 {
            self.bytes_received
        }

        pub fn set_max_frame(&mut self, max: usize) {
            self.max_frame = max;
        }
    }

    enum EndpointKind {
        Tcp(String),
        Inproc(String),
    }

    fn parse_endpoint(endpoint: &str) -> Result<EndpointKind, TransportError> {
        if endpoint == "inproc" {
            return Ok(EndpointKind::Inproc(String::new()));
        }
        if let Some(name) = endpoint.strip_prefix("inproc:") {
            return Ok(EndpointKind::Inproc(name.to_string()));
        }
        if endpoint.contains(':') {
            return Ok(EndpointKind::Tcp(endpoint.to_string()));
        }
        Err(TransportError::BadEndpoint(endpoint.to_string()))
    }

    type InprocRendezvous = Sender<(SyncSender<Vec<u8>>, Receiver<Vec<u8>>)>;

    fn inproc_registry() -> &'static Mutex<HashMap<String, InprocRendezvous>> {
        static REGISTRY: OnceLock<Mutex<HashMap<String, InprocRendezvous>>> = OnceLock::new();
        REGISTRY.get_or_init(|| Mutex::new(HashMap::new()))
    }

    /// Running server handle; dropping it stops accepting new sessions.
    pub struct Server {
        local_addr: Option<std::net::SocketAddr>,
        inproc_name: Option<String>,
        stop: Arc<AtomicBool>,
    }

    impl Server {
        pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
            self.local_addr
        }

        pub fn shutdown(&self) {
            self.stop.store(true, Ordering::SeqCst);
        }
    }

    impl Drop for Server {
        fn drop(&mut self) {
            self.shutdown();
            if let Some(name) = &self.inproc_name {
                inproc_registry().lock().unwrap().remove(name);
            }
        }
    }

    /// Accepts sessions on `endpoint` ("host:port" or "inproc[:name]") and
    /// runs `handler` on each in its own thread.
    pub fn serve<H>(endpoint: &str, handler: H) -> Result<Server, TransportError>
    where
        H: Fn(Session) + Send + Sync + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        match parse_endpoint(endpoint)? {
            EndpointKind::Tcp(addr) => {
                let listener = TcpListener::bind(&addr)?;
                let local_addr = listener.local_addr().ok();
                let handler = Arc::new(handler);
                let stop2 = stop.clone();
                std::thread::spawn(move || {
                    for conn in listener.incoming() {
                        if stop2.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(tcp) = conn else { break };
                        let handler = handler.clone();
                        std::thread::spawn(move || {
                            handler(Session {
                                stream: Stream::Tcp(tcp),
                                max_frame: DEFAULT_MAX_FRAME,
                                bytes_sent: 0,
                                bytes_received: 0,
                            });
                        });
                    }
                });
                Ok(Server {
                    local_addr,
                    inproc_name: None,
                    stop,
                })
            }
            EndpointKind::Inproc(name) => {
                let (rendezvous_tx, rendezvous_rx) = std::sync::mpsc::channel();
                inproc_registry()
                    .lock()
                    .unwrap()
                    .insert(name.clone(), rendezvous_tx);
                let handler = Arc::new(handler);
                let stop2 = stop.clone();
                std::thread::spawn(move || {
                    while let Ok((tx, rx)) = rendezvous_rx.recv() {
                        if stop2.load(Ordering::SeqCst) {
                            break;
                        }
                        let handler = handler.clone();
                        std::thread::spawn(move || {
                            handler(Session {
                                stream: Stream::Inproc {
                                    tx,
                                    rx,
                                    buf: Vec::new(),
                                },
                                max_frame: DEFAULT_MAX_FRAME,
                                bytes_sent: 0,
                                bytes_received: 0,
                            });
                        });
                    }
                });
                Ok(Server {
                    local_addr: None,
                    inproc_name: Some(name),
                    stop,
                })
            }
        }
    }

    /// Opens a client session to a served endpoint.
    pub fn connect(endpoint: &str) -> Result<Session, TransportError> {
        match parse_endpoint(endpoint)? {
            EndpointKind::Tcp(addr) => Ok(Session {
                stream: Stream::Tcp(TcpStream::connect(addr)?),
                max_frame: DEFAULT_MAX_FRAME,
                bytes_sent: 0,
                bytes_received: 0,
            }),
            EndpointKind::Inproc(name) => {
                let rendezvous = {
                    let registry = inproc_registry().lock().unwrap();
                    registry
                        .get(&name)
                        .cloned()
                        .ok_or(TransportError::NoListener(name.clone()))?
                };
                // two bounded byte channels form the duplex pair
                let (client_tx, server_rx) = std::sync::mpsc::sync_channel(1024);
                let (server_tx, client_rx) = std::sync::mpsc::sync_channel(1024);
                rendezvous
                    .send((server_tx, server_rx))
                    .map_err(|_| TransportError::NoListener(name))?;
                Ok(Session {
                    stream: Stream::Inproc {
                        tx: client_tx,
                        rx: client_rx,
                        buf: Vec::new(),
                    },
                    max_frame: DEFAULT_MAX_FRAME,
                    bytes_sent: 0,
                    bytes_received: 0,
                })
            }
        }
    }
}
