//! A minimal HTTP server speaking the scoring protocol, for tests and
//! offline demos. Replies are scripted per request; once the script is
//! exhausted the fallback reply is used.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::render::read_wav;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Json { status: u16, body: String },
    /// Waits before sending the inner reply.
    Delay { ms: u64, then: Box<MockReply> },
    /// Ratings derived from the loudness of the posted WAV.
    FromAudio,
    /// Drops the connection without answering.
    Close,
}

impl MockReply {
    pub fn ok(body: &str) -> Self {
        MockReply::Json {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        MockReply::Json {
            status,
            body: format!("{{\"error\":\"status {status}\"}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub content_type: Option<String>,
    pub authorization: Option<String>,
    pub body_len: usize,
}

struct Shared {
    script: Mutex<(Vec<MockReply>, usize)>,
    fallback: MockReply,
    requests: Mutex<Vec<MockRequest>>,
    stop: AtomicBool,
}

pub struct MockScorerServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockScorerServer {
    /// Binds an ephemeral localhost port and serves in a background thread.
    pub fn start(script: Vec<MockReply>, fallback: MockReply) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", script, fallback)
    }

    pub fn bind(addr: &str, script: Vec<MockReply>, fallback: MockReply) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            script: Mutex::new((script, 0)),
            fallback,
            requests: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let s = Arc::clone(&s);
                    std::thread::spawn(move || {
                        let _ = handle_connection(stream, &s);
                    });
                }
            }
        });
        Ok(MockScorerServer {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.shared.requests.lock().expect("lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().expect("lock").len()
    }

    /// Blocks the calling thread until the server is stopped from elsewhere.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockScorerServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let (mut content_length, mut content_type, mut authorization) = (0usize, None, None);
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let v = v.trim().to_string();
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = v.parse().unwrap_or(0),
                "content-type" => content_type = Some(v),
                "authorization" => authorization = Some(v),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    shared.requests.lock().expect("lock").push(MockRequest {
        method: method.clone(),
        path: path.clone(),
        content_type,
        authorization,
        body_len: body.len(),
    });
    let reply = {
        let mut script = shared.script.lock().expect("lock");
        let idx = script.1;
        script.1 += 1;
        script.0.get(idx).cloned().unwrap_or_else(|| shared.fallback.clone())
    };
    let reply = if method != "POST" || path != "/score" {
        MockReply::Json {
            status: 404,
            body: "{\"error\":\"not found\"}".into(),
        }
    } else {
        reply
    };
    respond(stream, reply, &body)
}

fn respond(mut stream: TcpStream, reply: MockReply, body: &[u8]) -> std::io::Result<()> {
    let mut reply = reply;
    loop {
        match reply {
            MockReply::Delay { ms, then } => {
                std::thread::sleep(Duration::from_millis(ms));
                reply = *then;
            }
            MockReply::Close => return Ok(()),
            MockReply::FromAudio => {
                reply = MockReply::ok(&audio_ratings(body));
            }
            MockReply::Json { status, body } => {
                let head = format!(
                    "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reason(status),
                    body.len()
                );
                stream.write_all(head.as_bytes())?;
                stream.write_all(body.as_bytes())?;
                return stream.flush();
            }
        }
    }
}

fn audio_ratings(wav: &[u8]) -> String {
    let rms = read_wav(wav).map(|c| c.rms()).unwrap_or(0.0);
    let level = (rms / 0.1).min(1.0);
    format!(
        "{{\"CE\":{},\"CU\":{},\"PC\":{},\"PQ\":{}}}",
        1.0 + 9.0 * level,
        1.0 + 8.0 * level,
        1.0 + 3.0 * level,
        5.0 + 2.0 * level
    )
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
