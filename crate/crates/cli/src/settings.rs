//! Layered run settings: command-line flags over a key = value file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use steerkit::codec::{IdentityCodec, LatentCodec, PoolingCodec};
use steerkit::ddpm::{NoiseSchedule, ScheduleKind};
use steerkit::denoiser::{BiasSpec, PredictionKind, PriorComponent, Recall};
use steerkit::io::read_config;
use steerkit::{Error, Result};

/// Every key a settings file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "k",
    "zeta",
    "fill_density",
    "steps",
    "seed",
    "refit_per_step",
    "resample_positions_per_step",
    "schedule",
    "codec",
    "bias",
    "recall",
    "kind",
    "bridge",
    "n_depth",
    "erase",
    "areas",
    "ks",
];

pub struct FileLayer {
    values: BTreeMap<String, String>,
    origin: String,
}

impl FileLayer {
    pub fn empty() -> Self {
        Self {
            values: BTreeMap::new(),
            origin: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let values = read_config(path)?;
        if let Some(bad) = values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Parameter(format!(
                "{}: unknown setting {bad:?}",
                path.display()
            )));
        }
        Ok(Self {
            values,
            origin: path.display().to_string(),
        })
    }

    /// The flag if given, else the file value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Parameter(format!("{}: {key} = {raw:?}: {e}", self.origin))),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}

/// `default`, `linear:B0:B1:T` or `scaled-linear:B0:B1:T`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Default,
    Built { kind: ScheduleKind, steps: usize },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self {
            ScheduleSpec::Default => Ok(NoiseSchedule::default_inference()),
            ScheduleSpec::Built { kind, steps } => NoiseSchedule::build(*steps, kind),
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "default" {
            return Ok(Self::Default);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let [name, b0, b1, t] = parts[..] else {
            return Err("expected default, linear:B0:B1:T or scaled-linear:B0:B1:T".into());
        };
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        let (beta_start, beta_end) = (num(b0)?, num(b1)?);
        let steps = t.parse::<usize>().map_err(|e| format!("{t:?}: {e}"))?;
        let kind = match name {
            "linear" => ScheduleKind::Linear {
                beta_start,
                beta_end,
            },
            "scaled-linear" => ScheduleKind::ScaledLinear {
                beta_start,
                beta_end,
            },
            other => return Err(format!("unknown schedule {other:?}")),
        };
        Ok(Self::Built { kind, steps })
    }
}

/// `identity` or `pool:F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CodecSpec {
    Identity,
    Pool(usize),
}

impl CodecSpec {
    pub fn build(self) -> Result<Box<dyn LatentCodec + Send + Sync>> {
        Ok(match self {
            CodecSpec::Identity => Box::new(IdentityCodec),
            CodecSpec::Pool(f) => Box::new(PoolingCodec::new(f)?),
        })
    }
}

impl FromStr for CodecSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(':') {
            None if s == "identity" => Ok(Self::Identity),
            Some(("pool", f)) => f.parse().map(Self::Pool).map_err(|e| format!("{f:?}: {e}")),
            _ => Err("expected identity or pool:F".into()),
        }
    }
}

/// Biases applied in order, joined by `+`: `none`, `blur:R`,
/// `calibrated-blur:R`, `warp:S:B`, `plane`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasChain(pub Vec<BiasSpec>);

impl FromStr for BiasChain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            return Ok(Self(Vec::new()));
        }
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        s.split('+')
            .map(|part| {
                let fields: Vec<&str> = part.split(':').collect();
                match fields[..] {
                    ["blur", r] => Ok(BiasSpec::GaussianBlur { radius: num(r)? }),
                    ["calibrated-blur", r] => Ok(BiasSpec::CalibratedBlur { radius: num(r)? }),
                    ["warp", a, b] => Ok(BiasSpec::AffineWarp {
                        scale: num(a)?,
                        shift: num(b)?,
                    }),
                    ["plane"] => Ok(BiasSpec::PlaneFit),
                    _ => Err(format!("unknown bias {part:?}")),
                }
            })
            .collect::<std::result::Result<_, _>>()
            .map(Self)
    }
}

/// `none` or comma-separated `STD:LEN` prior components.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallSpec(pub Vec<PriorComponent>);

impl RecallSpec {
    pub fn build(&self) -> Result<Recall> {
        Recall::new(self.0.clone())
    }
}

impl FromStr for RecallSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            return Ok(Self(Vec::new()));
        }
        s.split(',')
            .map(|part| {
                let (std, length) = part
                    .split_once(':')
                    .ok_or_else(|| format!("expected STD:LEN, got {part:?}"))?;
                Ok(PriorComponent {
                    std: std.parse().map_err(|e| format!("{std:?}: {e}"))?,
                    length: length.parse().map_err(|e| format!("{length:?}: {e}"))?,
                })
            })
            .collect::<std::result::Result<_, String>>()
            .map(Self)
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<T>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(Self)
    }
}

pub fn parse_kind(s: &str) -> std::result::Result<PredictionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
