use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::wire::{self, WireError, WireRequest, WireResponse};
use super::{file_provide, Latency, PerceptionProvider, PerceptionRequest, PerceptionResult, ProviderError};
use crate::error::ObsError;
use crate::raster::{DepthMap, Image};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

fn map_wire(e: WireError) -> ProviderError {
    match e {
        WireError::Io(io) => match io.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProviderError::Timeout,
            io::ErrorKind::UnexpectedEof => ProviderError::Malformed("truncated response".into()),
            _ => ProviderError::Io(io),
        },
        other => ProviderError::Malformed(other.to_string()),
    }
}

fn map_io(e: io::Error) -> ProviderError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProviderError::Timeout,
        _ => ProviderError::Io(e),
    }
}

/// Client for the remote perception protocol.
///
/// Holds one connection, opened lazily and dropped after any error; calls
/// are serialized over it.
#[derive(Debug)]
pub struct RemoteProvider {
    endpoint: SocketAddr,
    timeout: Duration,
    want_depth: bool,
    conn: Mutex<Option<TcpStream>>,
}

impl RemoteProvider {
    pub fn new(endpoint: impl ToSocketAddrs) -> Result<Self, ProviderError> {
        let endpoint = endpoint
            .to_socket_addrs()
            .map_err(ProviderError::Io)?
            .next()
            .ok_or_else(|| ProviderError::Malformed("endpoint resolves to no address".into()))?;
        Ok(Self { endpoint, timeout: DEFAULT_TIMEOUT, want_depth: true, conn: Mutex::new(None) })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_depth(mut self, want_depth: bool) -> Self {
        self.want_depth = want_depth;
        self
    }

    fn connect(&self) -> Result<TcpStream, ProviderError> {
        let stream = TcpStream::connect_timeout(&self.endpoint, self.timeout).map_err(map_io)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(ProviderError::Io)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(ProviderError::Io)?;
        stream.set_nodelay(true).map_err(ProviderError::Io)?;
        Ok(stream)
    }

    fn exchange(&self, stream: &mut TcpStream, request: &PerceptionRequest) -> Result<PerceptionResult, ProviderError> {
        let dims = request.frame.dims();
        let (width, height) = match (u16::try_from(dims.width), u16::try_from(dims.height)) {
            (Ok(w), Ok(h)) => (w, h),
            _ => return Err(ProviderError::Malformed(format!("frame {dims} too large for the wire format"))),
        };
        let msg = wire::encode_request(&WireRequest {
            frame_id: request.frame_id,
            width,
            height,
            rgb: request.frame.as_bytes().to_vec(),
            object_label: request.spec.object_label.clone(),
            robot_label: request.spec.robot_label.clone(),
            want_depth: self.want_depth,
        });
        let start = Instant::now();
        stream.write_all(&msg).map_err(map_io)?;
        let resp = wire::read_response(stream, dims, self.want_depth).map_err(map_wire)?;
        let elapsed = start.elapsed().as_secs_f64();
        if resp.frame_id != request.frame_id {
            return Err(ProviderError::Malformed(format!(
                "response for frame {} to request for frame {}",
                resp.frame_id, request.frame_id
            )));
        }
        let body = match resp.body {
            Some(b) if resp.status == wire::STATUS_OK => b,
            _ => return Err(ProviderError::Status { status: resp.status, frame_id: resp.frame_id }),
        };
        let depth = body.depth.map(|samples| {
            let values = samples.iter().map(|&q| q as f64 / 65535.0).collect();
            DepthMap::new(dims.width, dims.height, values).expect("unit-range samples")
        });
        Ok(PerceptionResult {
            robot: body.robot,
            object: body.object,
            depth,
            latency: Latency { segmentation: elapsed, depth: 0.0 },
        })
    }
}

impl PerceptionProvider for RemoteProvider {
    fn provide(&self, request: &PerceptionRequest) -> Result<PerceptionResult, ProviderError> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut stream = match guard.take() {
            Some(s) => s,
            None => self.connect()?,
        };
        let result = self.exchange(&mut stream, request);
        if result.is_ok() {
            *guard = Some(stream);
        }
        result
    }
}

/// One-shot request with depth and the default timeout.
pub fn remote_provide(
    request: &PerceptionRequest,
    endpoint: impl ToSocketAddrs,
) -> Result<PerceptionResult, ProviderError> {
    RemoteProvider::new(endpoint)?.provide(request)
}

/// Reference server for the wire protocol, answering from the mask and depth
/// files of one episode directory. `frame_id` selects the time index.
#[derive(Debug)]
pub struct EchoServer {
    listener: TcpListener,
    source: PathBuf,
    delay: Duration,
}

impl EchoServer {
    pub fn bind(addr: impl ToSocketAddrs, source: impl Into<PathBuf>) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, source: source.into(), delay: Duration::ZERO })
    }

    /// Sleeps before every response, emulating model latency.
    pub fn with_response_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the process exits.
    pub fn serve(self) -> io::Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        self.accept_loop(&stop)
    }

    /// Serves on a background thread until the handle is dropped.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            if let Err(e) = self.accept_loop(&flag) {
                log::error!("echo server stopped: {e}");
            }
        });
        Ok(ServerHandle { addr, stop, thread: Some(thread) })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let source = self.source.clone();
                    let delay = self.delay;
                    std::thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, &source, delay) {
                            log::debug!("connection closed: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn answer(req: &WireRequest, source: &std::path::Path) -> WireResponse {
    let fail = |status| WireResponse { frame_id: req.frame_id, status, body: None };
    let frame = match Image::new(req.width as usize, req.height as usize, req.rgb.clone()) {
        Ok(f) => f,
        Err(_) => return fail(wire::STATUS_MALFORMED),
    };
    let spec = crate::obs::TaskSpec {
        object_label: req.object_label.clone(),
        robot_label: req.robot_label.clone(),
        ..Default::default()
    };
    let request = PerceptionRequest { frame_id: req.frame_id, frame, spec };
    match file_provide(&request, source) {
        Ok(r) => {
            let depth = match (req.want_depth, r.depth) {
                (false, _) => None,
                (true, None) => return fail(wire::STATUS_NO_DEPTH),
                (true, Some(d)) => Some(d.values().iter().map(|v| (v * 65535.0).round() as u16).collect()),
            };
            WireResponse {
                frame_id: req.frame_id,
                status: wire::STATUS_OK,
                body: Some(wire::ResponseBody { robot: r.robot, object: r.object, depth }),
            }
        }
        Err(ProviderError::MissingFile(_)) => fail(wire::STATUS_NOT_FOUND),
        Err(ProviderError::Obs(ObsError::DimensionMismatch { .. })) => fail(wire::STATUS_DIMENSIONS),
        Err(e) => {
            log::warn!("frame {}: {e}", req.frame_id);
            fail(wire::STATUS_INTERNAL)
        }
    }
}

fn handle_connection(stream: TcpStream, source: &std::path::Path, delay: Duration) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let resp = match wire::read_request(&mut reader) {
            Ok(req) => answer(&req, source),
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(WireError::Io(e)) => return Err(e),
            Err(e) => {
                // the stream cannot be resynchronized after a bad header
                log::debug!("rejecting request: {e}");
                writer.write_all(&wire::encode_response(&WireResponse {
                    frame_id: 0,
                    status: wire::STATUS_MALFORMED,
                    body: None,
                }))?;
                writer.flush()?;
                return Ok(());
            }
        };
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        writer.write_all(&wire::encode_response(&resp))?;
        writer.flush()?;
    }
}
