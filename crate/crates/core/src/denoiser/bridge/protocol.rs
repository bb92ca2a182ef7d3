//! Frame and payload codecs for the bridge wire format.
//!
//! A frame is `b"SMBR" | version: u16 | msg_type: u16 | payload_len: u64 |
//! payload`, little-endian throughout. Tensors are `ndim: u32 | dims: u32 x
//! ndim | f32 data` in row-major order.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::latent::Planes;

pub const MAGIC: [u8; 4] = *b"SMBR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
/// Frames announcing more than this many payload bytes are rejected before
/// any allocation.
pub const DEFAULT_MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum MsgType {
    Init = 1,
    InitAck = 2,
    Encode = 3,
    Decode = 4,
    Predict = 5,
    Response = 6,
    Error = 7,
    Shutdown = 8,
}

impl MsgType {
    pub fn from_u16(v: u16) -> Option<Self> {
        Some(match v {
            1 => Self::Init,
            2 => Self::InitAck,
            3 => Self::Encode,
            4 => Self::Decode,
            5 => Self::Predict,
            6 => Self::Response,
            7 => Self::Error,
            8 => Self::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.msg_type as u16).to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.to_bytes()).map_err(Error::Connection)?;
    w.flush().map_err(Error::Connection)
}

/// Reads one complete frame. Transport failures (including a stream that
/// ends mid-frame) are connection errors; well-delivered bytes that do not
/// form a valid frame are protocol errors.
pub fn read_frame<R: Read + ?Sized>(r: &mut R, max_payload: u64) -> Result<Frame> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(Error::Connection)?;
    if header[..4] != MAGIC {
        return Err(Error::Protocol(format!("bad magic {:02x?}", &header[..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Protocol(format!(
            "unsupported protocol version {version}"
        )));
    }
    let raw_type = u16::from_le_bytes([header[6], header[7]]);
    let msg_type = MsgType::from_u16(raw_type)
        .ok_or_else(|| Error::Protocol(format!("unknown message type {raw_type}")))?;
    let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    if len > max_payload {
        return Err(Error::Protocol(format!(
            "payload of {len} bytes exceeds limit of {max_payload}"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Connection(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("stream ended inside a {len}-byte payload"),
            ))
        } else {
            Error::Connection(e)
        }
    })?;
    Ok(Frame { msg_type, payload })
}

/// Sequential little-endian reader over one payload.
pub struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Protocol(format!(
                "payload truncated reading {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len()
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, "u32")?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, "f64")?.try_into().expect("8 bytes"),
        ))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Protocol(format!(
                "tensor rank {ndim} is implausible"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let d = self.u32()? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Protocol("tensor element count overflows".into()))?;
            dims.push(d);
        }
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Protocol("tensor byte count overflows".into()))?;
        let raw = self.take(bytes, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Fails if bytes are left over.
    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Protocol(format!(
                "{} trailing bytes in payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_planes(p: &Planes) -> Self {
        Self {
            dims: vec![p.channels, p.height, p.width],
            data: p.data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn into_planes(self) -> Result<Planes> {
        let [c, h, w] = self.dims[..] else {
            return Err(Error::Protocol(format!(
                "expected a rank-3 tensor, got dims {:?}",
                self.dims
            )));
        };
        Planes::from_vec(c, h, w, self.data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn tensor_payload(p: &Planes) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 + 4 * p.data.len());
    Tensor::from_planes(p).write(&mut out);
    out
}

/// Reads a payload that consists of exactly one rank-3 tensor.
pub fn parse_tensor_payload(payload: &[u8]) -> Result<Planes> {
    let mut r = PayloadReader::new(payload);
    let t = r.tensor()?;
    r.finish()?;
    t.into_planes()
}

/// INIT: the image size the client will work at and its step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitRequest {
    pub height: u32,
    pub width: u32,
    pub steps: u32,
}

impl InitRequest {
    pub fn to_payload(&self) -> Vec<u8> {
        [self.height, self.width, self.steps]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    pub fn parse(payload: &[u8]) -> Result<Self> {
        let mut r = PayloadReader::new(payload);
        let out = Self {
            height: r.u32()?,
            width: r.u32()?,
            steps: r.u32()?,
        };
        r.finish()?;
        Ok(out)
    }
}

/// INIT_ACK: the server's beta table and latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct InitAck {
    pub betas: Vec<f64>,
    pub latent_channels: u32,
    pub latent_height: u32,
    pub latent_width: u32,
}

impl InitAck {
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.betas.len());
        out.extend_from_slice(&(self.betas.len() as u32).to_le_bytes());
        for b in &self.betas {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for v in [self.latent_channels, self.latent_height, self.latent_width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn parse(payload: &[u8]) -> Result<Self> {
        let mut r = PayloadReader::new(payload);
        let steps = r.u32()? as usize;
        if steps.saturating_mul(8) > r.remaining() {
            return Err(Error::Protocol(format!(
                "INIT_ACK announces {steps} betas but carries {} bytes",
                r.remaining()
            )));
        }
        let betas = (0..steps).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let out = Self {
            betas,
            latent_channels: r.u32()?,
            latent_height: r.u32()?,
            latent_width: r.u32()?,
        };
        r.finish()?;
        Ok(out)
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (
            self.latent_channels as usize,
            self.latent_height as usize,
            self.latent_width as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub timestep: u32,
    pub x_t: Planes,
    pub rgb_latent: Planes,
}

impl PredictRequest {
    pub fn to_payload(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(8 * (self.x_t.data.len() + self.rgb_latent.data.len()) + 40);
        out.extend_from_slice(&self.timestep.to_le_bytes());
        Tensor::from_planes(&self.x_t).write(&mut out);
        Tensor::from_planes(&self.rgb_latent).write(&mut out);
        out
    }

    pub fn parse(payload: &[u8]) -> Result<Self> {
        let mut r = PayloadReader::new(payload);
        let timestep = r.u32()?;
        let x_t = r.tensor()?.into_planes()?;
        let rgb_latent = r.tensor()?.into_planes()?;
        r.finish()?;
        Ok(Self {
            timestep,
            x_t,
            rgb_latent,
        })
    }
}

pub fn error_frame(message: &str) -> Frame {
    Frame::new(MsgType::Error, message.as_bytes().to_vec())
}
