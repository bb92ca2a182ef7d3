use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::area::{erase_region, evaluation_mask, sample_sparse, EvaluationArea};
use super::metrics::{compute_metrics, MetricsAccumulator};
use crate::codec::LatentCodec;
use crate::ddpm::NoiseSchedule;
use crate::denoiser::Denoiser;
use crate::depth::{DepthMap, RgbImage, SparseDepth};
use crate::error::{Error, Result};
use crate::steering::{complete, Completion, SteeringConfig};

/// One evaluation sample.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub rgb: RgbImage,
    pub gt: DepthMap,
}

/// Maps valid depth linearly onto `[-1, 1]`, the value range a depth
/// latent is expected to occupy. Invalid pixels map to `-1`.
pub fn normalize_relative(gt: &DepthMap) -> Result<DepthMap> {
    let (lo, hi) = gt
        .values
        .iter()
        .filter(|v| **v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return Err(Error::Data("depth map has no valid pixels".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let values = gt
        .values
        .iter()
        .map(|&v| {
            if v > 0.0 && v.is_finite() {
                2.0 * (v - lo) / span - 1.0
            } else {
                -1.0
            }
        })
        .collect();
    DepthMap::new(gt.height, gt.width, values, false)
}

/// Sampling, erasure, evaluation areas and steering factors of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Points sampled from valid ground truth before any erasure.
    pub n_depth: usize,
    /// Region whose points are removed after sampling.
    pub erase: Option<EvaluationArea>,
    pub areas: Vec<EvaluationArea>,
    pub ks: Vec<f64>,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.areas.is_empty() || self.ks.is_empty() {
            return Err(Error::param("protocol needs at least one area and one k"));
        }
        if let Some(k) = self.ks.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(Error::param(format!("invalid steering factor {k}")));
        }
        Ok(())
    }
}

/// One row of benchmark output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub scene_id: String,
    pub area: String,
    pub n_depth: usize,
    pub k: f64,
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    pub delta1: f64,
    pub n_pixels: usize,
    pub runtime_ms: f64,
}

pub const AGGREGATE_ID: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFailure {
    pub scene_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkReport {
    pub per_scene: Vec<BenchmarkRecord>,
    /// Pixel-weighted pooling over successful scenes, one per (area, k).
    pub aggregate: Vec<BenchmarkRecord>,
    pub failures: Vec<SceneFailure>,
}

impl BenchmarkReport {
    pub fn aggregate_for(&self, area: &EvaluationArea, k: f64) -> Option<&BenchmarkRecord> {
        let name = area.to_string();
        self.aggregate.iter().find(|r| r.area == name && r.k == k)
    }

    pub fn scene_record(
        &self,
        scene_id: &str,
        area: &EvaluationArea,
        k: f64,
    ) -> Option<&BenchmarkRecord> {
        let name = area.to_string();
        self.per_scene
            .iter()
            .find(|r| r.scene_id == scene_id && r.area == name && r.k == k)
    }

    pub fn records(&self) -> impl Iterator<Item = &BenchmarkRecord> {
        self.per_scene.iter().chain(&self.aggregate)
    }

    /// Line-delimited JSON, per-scene records followed by aggregates.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in self.records() {
            out.serialize(r).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

/// Per-scene seed derived from the global seed and the scene index.
pub fn scene_seed(global: u64, index: usize) -> u64 {
    global ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Random stream used for sparse sampling, distinct from the streams of
/// the completion run itself.
const SAMPLING_STREAM: u64 = 2;

/// The sparse condition a benchmark feeds to scene `index`.
pub fn benchmark_condition(scene: &Scene, protocol: &Protocol, seed: u64) -> Result<SparseDepth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);
    let c = sample_sparse(&scene.gt, protocol.n_depth, &mut rng)?;
    Ok(match &protocol.erase {
        Some(area) => erase_region(&c, area),
        None => c,
    })
}

pub fn run_benchmark<D, F, C>(
    scenes: &[Scene],
    protocol: &Protocol,
    config: &SteeringConfig,
    make_denoiser: F,
    codec: &C,
    sched: &NoiseSchedule,
) -> Result<BenchmarkReport>
where
    D: Denoiser,
    F: Fn(&Scene) -> Result<D> + Sync,
    C: LatentCodec + Sync + ?Sized,
{
    run_benchmark_with(
        scenes,
        protocol,
        config,
        make_denoiser,
        codec,
        sched,
        |_, _, _, _| {},
    )
}

/// Like [`run_benchmark`], calling `observe(scene, condition, k, completion)`
/// after every successful completion.
///
/// Scenes are spread over worker threads. Every scene depends only on its
/// own seed, so the report does not depend on scheduling, but `observe` may
/// see scenes out of order.
pub fn run_benchmark_with<D, F, C, O>(
    scenes: &[Scene],
    protocol: &Protocol,
    config: &SteeringConfig,
    make_denoiser: F,
    codec: &C,
    sched: &NoiseSchedule,
    observe: O,
) -> Result<BenchmarkReport>
where
    D: Denoiser,
    F: Fn(&Scene) -> Result<D> + Sync,
    C: LatentCodec + Sync + ?Sized,
    O: FnMut(&Scene, &SparseDepth, f64, &Completion) + Send,
{
    if scenes.is_empty() {
        return Err(Error::EmptyReport("the dataset contains no scenes".into()));
    }
    protocol.validate()?;
    config.validate()?;
    let observe = Mutex::new(observe);
    let run_scene = |index: usize| -> Result<Vec<BenchmarkRecord>> {
        let scene = &scenes[index];
        let seed = scene_seed(config.seed, index);
        let c = benchmark_condition(scene, protocol, seed)?;
        let masks = protocol
            .areas
            .iter()
            .map(|a| evaluation_mask(a, &scene.gt))
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        for &k in &protocol.ks {
            let cfg = config.clone().with_k(k).with_seed(seed);
            let mut denoiser = make_denoiser(scene)?;
            let start = Instant::now();
            let done = complete(&scene.rgb, &c, &cfg, &mut denoiser, codec, sched)?;
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            for (area, mask) in protocol.areas.iter().zip(&masks) {
                let m = compute_metrics(&done.depth, &scene.gt, mask)?;
                records.push(BenchmarkRecord {
                    scene_id: scene.id.clone(),
                    area: area.to_string(),
                    n_depth: protocol.n_depth,
                    k,
                    rmse: m.rmse,
                    mae: m.mae,
                    rel: m.rel,
                    delta1: m.delta1,
                    n_pixels: m.n_pixels,
                    runtime_ms,
                });
            }
            let mut obs = observe.lock().unwrap_or_else(|p| p.into_inner());
            (*obs)(scene, &c, k, &done);
        }
        Ok(records)
    };

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(scenes.len());
    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, Result<Vec<BenchmarkRecord>>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= scenes.len() {
                            break done;
                        }
                        done.push((i, run_scene(i)));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);

    let mut report = BenchmarkReport::default();
    for (index, result) in results {
        match result {
            Ok(records) => report.per_scene.extend(records),
            Err(e) => report.failures.push(SceneFailure {
                scene_id: scenes[index].id.clone(),
                error: e.to_string(),
            }),
        }
    }
    report.aggregate = aggregate(&report.per_scene, protocol)?;
    Ok(report)
}

fn aggregate(records: &[BenchmarkRecord], protocol: &Protocol) -> Result<Vec<BenchmarkRecord>> {
    let mut groups: BTreeMap<(usize, usize), (MetricsAccumulator, f64, usize)> = BTreeMap::new();
    let area_names: Vec<String> = protocol.areas.iter().map(|a| a.to_string()).collect();
    for r in records {
        let ai = area_names.iter().position(|a| *a == r.area);
        let ki = protocol.ks.iter().position(|k| *k == r.k);
        let (Some(ai), Some(ki)) = (ai, ki) else {
            continue;
        };
        let g = groups.entry((ai, ki)).or_default();
        g.0.add_report(&super::metrics::MetricsReport {
            rmse: r.rmse,
            mae: r.mae,
            rel: r.rel,
            delta1: r.delta1,
            n_pixels: r.n_pixels,
        });
        g.1 += r.runtime_ms;
        g.2 += 1;
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((ai, ki), (acc, runtime, count)) in groups {
        let m = acc.finish()?;
        out.push(BenchmarkRecord {
            scene_id: AGGREGATE_ID.into(),
            area: area_names[ai].clone(),
            n_depth: protocol.n_depth,
            k: protocol.ks[ki],
            rmse: m.rmse,
            mae: m.mae,
            rel: m.rel,
            delta1: m.delta1,
            n_pixels: m.n_pixels,
            runtime_ms: runtime / count as f64,
        });
    }
    Ok(out)
}
