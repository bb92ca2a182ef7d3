use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::codec::LatentCodec;
use crate::ddpm::NoiseSchedule;
use crate::denoiser::{Denoiser, PredictionKind};
use crate::error::{Error, Result};
use crate::latent::{LatentSample, Planes};

use super::protocol::{
    parse_tensor_payload, read_frame, tensor_payload, write_frame, Frame, InitAck, InitRequest,
    MsgType, PredictRequest, DEFAULT_MAX_PAYLOAD,
};

type Reader = BufReader<Box<dyn Read + Send>>;
type Writer = BufWriter<Box<dyn Write + Send>>;

/// Client end of one bridge connection. Requests are strictly sequential.
///
/// After a transport failure or a malformed server frame the session is
/// closed and every further call fails fast with a protocol error. An ERROR
/// frame from the server is reported as a remote error and the session
/// stays usable.
pub struct BridgeSession {
    reader: Reader,
    writer: Writer,
    child: Option<Child>,
    ack: Option<InitAck>,
    closed: bool,
    max_payload: u64,
}

impl std::fmt::Debug for BridgeSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeSession")
            .field("ack", &self.ack)
            .field("closed", &self.closed)
            .field("child", &self.child.as_ref().map(Child::id))
            .finish()
    }
}

impl BridgeSession {
    /// `host:port` for TCP or `stdio:<command>` to spawn a server process
    /// (via `sh -c`) and talk to it over its stdin and stdout.
    pub fn connect(target: &str) -> Result<Self> {
        if let Some(cmd) = target.strip_prefix("stdio:") {
            if cmd.trim().is_empty() {
                return Err(Error::param("stdio bridge needs a command"));
            }
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(cmd)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(Error::Connection)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let mut s = Self::from_streams(stdout, stdin);
            s.child = Some(child);
            Ok(s)
        } else {
            let stream = TcpStream::connect(target).map_err(Error::Connection)?;
            stream.set_nodelay(true).map_err(Error::Connection)?;
            let read_half = stream.try_clone().map_err(Error::Connection)?;
            Ok(Self::from_streams(read_half, stream))
        }
    }

    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self {
            reader: BufReader::new(Box::new(reader)),
            writer: BufWriter::new(Box::new(writer)),
            child: None,
            ack: None,
            closed: false,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }

    pub fn with_max_payload(mut self, bytes: u64) -> Self {
        self.max_payload = bytes;
        self
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn ack(&self) -> Option<&InitAck> {
        self.ack.as_ref()
    }

    /// Sends one request and waits for the matching reply.
    fn exchange(&mut self, request: Frame, expect: MsgType) -> Result<Vec<u8>> {
        if self.closed {
            return Err(Error::Protocol("session is closed".into()));
        }
        let reply = write_frame(&mut self.writer, &request)
            .and_then(|_| read_frame(&mut self.reader, self.max_payload));
        let frame = match reply {
            Ok(f) => f,
            Err(e) => {
                self.closed = true;
                return Err(e);
            }
        };
        match frame.msg_type {
            t if t == expect => Ok(frame.payload),
            MsgType::Error => Err(Error::Remote(
                String::from_utf8_lossy(&frame.payload).into_owned(),
            )),
            other => {
                self.closed = true;
                Err(Error::Protocol(format!(
                    "expected {expect:?}, server sent {other:?}"
                )))
            }
        }
    }

    /// Parses a reply; malformed content closes the session.
    fn parse_reply<T>(
        &mut self,
        payload: &[u8],
        parse: impl FnOnce(&[u8]) -> Result<T>,
    ) -> Result<T> {
        parse(payload).inspect_err(|_| self.closed = true)
    }

    fn require_init(&self) -> Result<&InitAck> {
        self.ack
            .as_ref()
            .ok_or_else(|| Error::Protocol("INIT must complete before other requests".into()))
    }

    pub fn init(&mut self, height: usize, width: usize, steps: usize) -> Result<&InitAck> {
        let req = InitRequest {
            height: to_u32(height, "height")?,
            width: to_u32(width, "width")?,
            steps: to_u32(steps, "steps")?,
        };
        let payload = self.exchange(
            Frame::new(MsgType::Init, req.to_payload()),
            MsgType::InitAck,
        )?;
        let ack = self.parse_reply(&payload, InitAck::parse)?;
        if ack.betas.is_empty() {
            self.closed = true;
            return Err(Error::Protocol(
                "INIT_ACK carries an empty beta table".into(),
            ));
        }
        Ok(self.ack.insert(ack))
    }

    /// The server's schedule, validated.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let ack = self.require_init()?;
        NoiseSchedule::from_betas(ack.betas.clone())
            .map_err(|e| Error::Protocol(format!("server schedule rejected: {e}")))
    }

    pub fn encode(&mut self, image: &Planes) -> Result<LatentSample> {
        let expect = self.require_init()?.latent_shape();
        let payload = self.exchange(
            Frame::new(MsgType::Encode, tensor_payload(image)),
            MsgType::Response,
        )?;
        let planes = self.parse_reply(&payload, parse_tensor_payload)?;
        if planes.shape() != expect {
            return Err(Error::Protocol(format!(
                "ENCODE returned shape {:?}, negotiated {expect:?}",
                planes.shape()
            )));
        }
        Ok(LatentSample::new(planes, 0))
    }

    pub fn decode(&mut self, latent: &LatentSample) -> Result<Planes> {
        let expect = self.require_init()?.latent_shape();
        if latent.shape() != expect {
            return Err(Error::dims(format!(
                "latent {:?} does not match negotiated {expect:?}",
                latent.shape()
            )));
        }
        let payload = self.exchange(
            Frame::new(MsgType::Decode, tensor_payload(&latent.grid)),
            MsgType::Response,
        )?;
        self.parse_reply(&payload, parse_tensor_payload)
    }

    pub fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        rgb_latent: &LatentSample,
    ) -> Result<LatentSample> {
        let expect = self.require_init()?.latent_shape();
        if x_t.shape() != expect {
            return Err(Error::dims(format!(
                "x_t {:?} does not match negotiated {expect:?}",
                x_t.shape()
            )));
        }
        let req = PredictRequest {
            timestep: to_u32(t, "timestep")?,
            x_t: x_t.grid.clone(),
            rgb_latent: rgb_latent.grid.clone(),
        };
        let payload = self.exchange(
            Frame::new(MsgType::Predict, req.to_payload()),
            MsgType::Response,
        )?;
        let planes = self.parse_reply(&payload, parse_tensor_payload)?;
        if planes.shape() != x_t.shape() {
            return Err(Error::Protocol(format!(
                "PREDICT returned shape {:?} for input {:?}",
                planes.shape(),
                x_t.shape()
            )));
        }
        Ok(LatentSample::new(planes, t))
    }

    /// Sends SHUTDOWN (no reply is expected) and closes the session.
    pub fn shutdown(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let sent = write_frame(&mut self.writer, &Frame::new(MsgType::Shutdown, Vec::new()));
        if let Some(mut child) = self.child.take() {
            // Closing stdin lets a well-behaved server exit even if the
            // SHUTDOWN frame was lost.
            self.writer = BufWriter::new(Box::new(std::io::sink()));
            child.wait().map_err(Error::Connection)?;
        }
        sent
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        let _ = self.shutdown();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::param(format!("{what} {v} does not fit the wire format")))
}

/// A session shared by a denoiser and a codec.
pub type SharedSession = Arc<Mutex<BridgeSession>>;

fn lock(s: &SharedSession) -> Result<MutexGuard<'_, BridgeSession>> {
    s.lock()
        .map_err(|_| Error::Protocol("bridge session poisoned by a panic".into()))
}

/// Remote denoiser. The reference server predicts velocity.
#[derive(Debug, Clone)]
pub struct BridgeDenoiser {
    session: SharedSession,
    kind: PredictionKind,
}

impl BridgeDenoiser {
    pub fn new(session: SharedSession) -> Self {
        Self {
            session,
            kind: PredictionKind::Velocity,
        }
    }

    pub fn with_kind(mut self, kind: PredictionKind) -> Self {
        self.kind = kind;
        self
    }
}

impl Denoiser for BridgeDenoiser {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn predict(
        &mut self,
        x_t: &LatentSample,
        t: usize,
        rgb_latent: &LatentSample,
        sched: &NoiseSchedule,
    ) -> Result<LatentSample> {
        sched.check_t(t)?;
        lock(&self.session)?.predict(x_t, t, rgb_latent)
    }
}

/// Remote encoder/decoder with the factor and channel count negotiated at
/// INIT.
#[derive(Debug, Clone)]
pub struct BridgeCodec {
    session: SharedSession,
    factor: usize,
    channels: usize,
    tolerance: f64,
}

impl BridgeCodec {
    /// `height` and `width` are the image dimensions sent at INIT.
    pub fn new(
        session: SharedSession,
        height: usize,
        width: usize,
        tolerance: f64,
    ) -> Result<Self> {
        let (channels, lh, lw) = {
            let s = lock(&session)?;
            s.require_init()?.latent_shape()
        };
        if lh == 0 || lw == 0 || height % lh != 0 || width % lw != 0 || height / lh != width / lw {
            return Err(Error::Protocol(format!(
                "latent grid {lh}x{lw} is not a uniform downscale of {height}x{width}"
            )));
        }
        Ok(Self {
            session,
            factor: height / lh,
            channels,
            tolerance,
        })
    }
}

impl LatentCodec for BridgeCodec {
    fn scale_factor(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        self.channels
    }

    fn tolerance(&self) -> f64 {
        self.tolerance
    }

    fn encode(&self, image: &Planes) -> Result<LatentSample> {
        lock(&self.session)?.encode(image)
    }

    fn decode(&self, latent: &LatentSample) -> Result<Planes> {
        lock(&self.session)?.decode(latent)
    }
}
