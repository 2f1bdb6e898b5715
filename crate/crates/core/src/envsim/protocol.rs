//! Newline-delimited JSON messages, one object per line, discriminated by a
//! `type` field:
//!
//! ```text
//! → {"type":"hello"}                  ← {"type":"spec","d_s":2,"d_a":1,"bounds":{…},"max_steps":200,…}
//! → {"type":"reset","seed":7}          ← {"type":"state","s":[-0.52,0.0]}
//! → {"type":"step","a":[0.3]}          ← {"type":"result","s":[…],"r":-0.009,"terminal":false,"truncated":false}
//!                                      ← {"type":"error","message":"…"}   (session closed)
//! ```
//!
//! Floats are written in shortest round-trip form, so values survive the
//! wire bit for bit.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::envsim::{EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello,
    Spec(EnvSpec),
    Reset {
        seed: u64,
    },
    State {
        s: Vec<f64>,
    },
    Step {
        a: Vec<f64>,
    },
    Result {
        s: Vec<f64>,
        r: f64,
        terminal: bool,
        truncated: bool,
    },
    Error {
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("messages always serialise");
        line.push('\n');
        line
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}

fn io_error(e: std::io::Error, timeout: Duration) -> Error {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => Error::Timeout(timeout),
        _ => Error::Io(e),
    }
}

/// Client side of the protocol. Requests are serialised on one connection;
/// any protocol violation closes it.
#[derive(Debug)]
pub struct RemoteEnv {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    spec: EnvSpec,
    timeout: Duration,
    open: bool,
}

impl RemoteEnv {
    /// Connects and performs the `hello`/`spec` handshake.
    pub fn connect(endpoint: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Protocol("endpoint did not resolve".into()))?;
        let stream =
            TcpStream::connect_timeout(&addr, timeout).map_err(|e| io_error(e, timeout))?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        let mut env = Self {
            reader: BufReader::new(stream),
            writer,
            spec: EnvSpec {
                state_dim: 0,
                action_dim: 0,
                bounds: crate::envsim::Bounds {
                    action_low: vec![],
                    action_high: vec![],
                    state_low: vec![],
                    state_high: vec![],
                },
                max_steps: 0,
                reward_range: (0.0, 0.0),
            },
            timeout,
            open: true,
        };
        match env.request(&Message::Hello)? {
            Message::Spec(spec) => {
                if let Err(e) = spec.validate() {
                    env.close();
                    return Err(Error::Protocol(format!("invalid spec: {e}")));
                }
                env.spec = spec;
                Ok(env)
            }
            other => Err(env.violation(format!("expected spec, got {other:?}"))),
        }
    }

    fn close(&mut self) {
        if self.open {
            self.open = false;
            let _ = self.writer.shutdown(Shutdown::Both);
        }
    }

    fn violation(&mut self, msg: String) -> Error {
        self.close();
        Error::Protocol(msg)
    }

    fn request(&mut self, msg: &Message) -> Result<Message> {
        if !self.open {
            return Err(Error::Protocol("session closed".into()));
        }
        let t = self.timeout;
        if let Err(e) = self.writer.write_all(msg.to_line().as_bytes()) {
            self.close();
            return Err(io_error(e, t));
        }
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(self.violation("connection closed by peer".into())),
            Ok(_) => match Message::parse(&line) {
                Ok(Message::Error { message }) => {
                    Err(self.violation(format!("remote error: {message}")))
                }
                Ok(m) => Ok(m),
                Err(e) => {
                    self.close();
                    Err(e)
                }
            },
            Err(e) => {
                self.close();
                Err(io_error(e, t))
            }
        }
    }

    fn check_state(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != self.spec.state_dim {
            self.close();
            return Err(Error::Dimension {
                what: "remote state",
                expected: self.spec.state_dim,
                got: s.len(),
            });
        }
        Ok(())
    }
}

impl Environment for RemoteEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        match self.request(&Message::Reset { seed })? {
            Message::State { s } => {
                self.check_state(&s)?;
                Ok(s)
            }
            other => Err(self.violation(format!("expected state, got {other:?}"))),
        }
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != self.spec.action_dim {
            return Err(Error::Dimension {
                what: "action",
                expected: self.spec.action_dim,
                got: action.len(),
            });
        }
        match self.request(&Message::Step { a: action.to_vec() })? {
            Message::Result {
                s,
                r,
                terminal,
                truncated,
            } => {
                self.check_state(&s)?;
                Ok(StepResult {
                    next_state: s,
                    reward: r,
                    terminal,
                    truncated,
                })
            }
            other => Err(self.violation(format!("expected result, got {other:?}"))),
        }
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        self.close();
    }
}

fn reply<E: Environment + ?Sized>(env: &mut E, msg: Message) -> Result<Message> {
    Ok(match msg {
        Message::Hello => Message::Spec(env.spec().clone()),
        Message::Reset { seed } => Message::State {
            s: env.reset(seed)?,
        },
        Message::Step { a } => {
            let r = env.step(&a)?;
            Message::Result {
                s: r.next_state,
                r: r.reward,
                terminal: r.terminal,
                truncated: r.truncated,
            }
        }
        other => {
            return Err(Error::Protocol(format!(
                "unexpected client message {other:?}"
            )))
        }
    })
}

/// Serves one client until it disconnects. Any error is reported to the
/// client as an `error` message and ends the session.
pub fn serve_connection<E: Environment + ?Sized>(stream: TcpStream, env: &mut E) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        match Message::parse(&line).and_then(|m| reply(env, m)) {
            Ok(m) => writer.write_all(m.to_line().as_bytes())?,
            Err(e) => {
                let msg = Message::Error {
                    message: e.to_string(),
                };
                let _ = writer.write_all(msg.to_line().as_bytes());
                let _ = writer.shutdown(Shutdown::Both);
                return Err(e);
            }
        }
    }
}

/// Accepts clients forever, each on its own thread with a fresh
/// environment from `factory`.
pub fn serve<F>(listener: TcpListener, factory: F) -> Result<()>
where
    F: Fn() -> Box<dyn Environment> + Send + Sync + 'static,
{
    let factory = std::sync::Arc::new(factory);
    for stream in listener.incoming() {
        let stream = stream?;
        let factory = factory.clone();
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let mut env = factory();
            if let Err(e) = serve_connection(stream, &mut env) {
                log::warn!("session with {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}
