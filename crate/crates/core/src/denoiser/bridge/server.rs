//! Server side of the bridge protocol, used to host denoisers in-process for
//! tests and tooling.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::thread::JoinHandle;

use crate::codec::{IdentityCodec, LatentCodec};
use crate::ddpm::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::{LatentSample, Planes};

use super::protocol::{
    error_frame, parse_tensor_payload, read_frame, tensor_payload, write_frame, Frame, InitAck,
    InitRequest, MsgType, PredictRequest, DEFAULT_MAX_PAYLOAD,
};

/// Request handlers. An `Err` becomes an ERROR frame and the session
/// continues.
pub trait BridgeHandler {
    fn init(&mut self, req: &InitRequest) -> std::result::Result<InitAck, String>;
    fn encode(&mut self, image: Planes) -> std::result::Result<Planes, String>;
    fn decode(&mut self, latent: Planes) -> std::result::Result<Planes, String>;
    fn predict(&mut self, req: PredictRequest) -> std::result::Result<Planes, String>;
}

/// Why a served session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    Shutdown,
    Disconnected,
    /// The client sent bytes that do not form a frame; an ERROR frame was
    /// sent before closing.
    Malformed,
}

/// Serves one session until SHUTDOWN, end of stream or a malformed frame.
pub fn serve<H, R, W>(handler: &mut H, reader: R, writer: W) -> Result<SessionEnd>
where
    H: BridgeHandler + ?Sized,
    R: Read,
    W: Write,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let mut initialized = false;
    loop {
        let frame = match read_frame(&mut reader, DEFAULT_MAX_PAYLOAD) {
            Ok(f) => f,
            Err(Error::Connection(_)) => return Ok(SessionEnd::Disconnected),
            Err(e) => {
                let _ = write_frame(&mut writer, &error_frame(&e.to_string()));
                return Ok(SessionEnd::Malformed);
            }
        };
        let reply = match frame.msg_type {
            MsgType::Shutdown => return Ok(SessionEnd::Shutdown),
            MsgType::Init => InitRequest::parse(&frame.payload)
                .map_err(|e| e.to_string())
                .and_then(|req| handler.init(&req))
                .map(|ack| {
                    initialized = true;
                    Frame::new(MsgType::InitAck, ack.to_payload())
                }),
            _ if !initialized => Err("INIT must come first".to_string()),
            MsgType::Encode => parse_tensor_payload(&frame.payload)
                .map_err(|e| e.to_string())
                .and_then(|p| handler.encode(p))
                .map(|p| Frame::new(MsgType::Response, tensor_payload(&p))),
            MsgType::Decode => parse_tensor_payload(&frame.payload)
                .map_err(|e| e.to_string())
                .and_then(|p| handler.decode(p))
                .map(|p| Frame::new(MsgType::Response, tensor_payload(&p))),
            MsgType::Predict => PredictRequest::parse(&frame.payload)
                .map_err(|e| e.to_string())
                .and_then(|r| handler.predict(r))
                .map(|p| Frame::new(MsgType::Response, tensor_payload(&p))),
            other => Err(format!("{other:?} is not a request")),
        };
        let out = reply.unwrap_or_else(|msg| error_frame(&msg));
        if write_frame(&mut writer, &out).is_err() {
            return Ok(SessionEnd::Disconnected);
        }
    }
}

type Predictor =
    Box<dyn FnMut(&PredictRequest, &NoiseSchedule) -> std::result::Result<Planes, String> + Send>;

/// In-process server: a local codec, a fixed beta table and a pluggable
/// prediction function (zeros by default).
pub struct LoopbackHandler {
    betas: Vec<f64>,
    codec: Box<dyn LatentCodec + Send>,
    predictor: Predictor,
    shape: Option<(usize, usize, usize)>,
}

impl Default for LoopbackHandler {
    fn default() -> Self {
        Self::new(NoiseSchedule::default_inference().betas().to_vec())
    }
}

impl LoopbackHandler {
    pub fn new(betas: Vec<f64>) -> Self {
        Self {
            betas,
            codec: Box::new(IdentityCodec),
            predictor: Box::new(|req, _| {
                Ok(Planes::zeros(
                    req.x_t.channels,
                    req.x_t.height,
                    req.x_t.width,
                ))
            }),
            shape: None,
        }
    }

    pub fn with_codec(mut self, codec: impl LatentCodec + Send + 'static) -> Self {
        self.codec = Box::new(codec);
        self
    }

    pub fn with_predictor<F>(mut self, f: F) -> Self
    where
        F: FnMut(&PredictRequest, &NoiseSchedule) -> std::result::Result<Planes, String>
            + Send
            + 'static,
    {
        self.predictor = Box::new(f);
        self
    }
}

impl BridgeHandler for LoopbackHandler {
    fn init(&mut self, req: &InitRequest) -> std::result::Result<InitAck, String> {
        let (c, h, w) = self
            .codec
            .latent_shape(req.height as usize, req.width as usize)
            .map_err(|e| e.to_string())?;
        self.shape = Some((c, h, w));
        Ok(InitAck {
            betas: self.betas.clone(),
            latent_channels: c as u32,
            latent_height: h as u32,
            latent_width: w as u32,
        })
    }

    fn encode(&mut self, image: Planes) -> std::result::Result<Planes, String> {
        self.codec
            .encode(&image)
            .map(|l| l.grid)
            .map_err(|e| e.to_string())
    }

    fn decode(&mut self, latent: Planes) -> std::result::Result<Planes, String> {
        self.codec
            .decode(&LatentSample::new(latent, 0))
            .map_err(|e| e.to_string())
    }

    fn predict(&mut self, req: PredictRequest) -> std::result::Result<Planes, String> {
        if Some(req.x_t.shape()) != self.shape {
            return Err(format!(
                "x_t shape {:?} does not match negotiated {:?}",
                req.x_t.shape(),
                self.shape
            ));
        }
        let sched = NoiseSchedule::from_betas(self.betas.clone()).map_err(|e| e.to_string())?;
        (self.predictor)(&req, &sched)
    }
}

/// Binds `127.0.0.1:0` and serves sessions on a background thread, one
/// connection at a time, until `max_sessions` have ended.
pub fn spawn_tcp<H>(
    mut handler: H,
    max_sessions: usize,
) -> Result<(SocketAddr, JoinHandle<Vec<SessionEnd>>)>
where
    H: BridgeHandler + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").map_err(Error::Connection)?;
    let addr = listener.local_addr().map_err(Error::Connection)?;
    let handle = std::thread::spawn(move || {
        let mut ends = Vec::new();
        for stream in listener.incoming().take(max_sessions) {
            let end = match stream.and_then(|s| Ok((s.try_clone()?, s))) {
                Ok((r, w)) => serve(&mut handler, r, w).unwrap_or(SessionEnd::Disconnected),
                Err(_) => SessionEnd::Disconnected,
            };
            ends.push(end);
        }
        ends
    });
    Ok((addr, handle))
}
