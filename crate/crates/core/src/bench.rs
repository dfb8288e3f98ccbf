//! Wall-clock throughput measurement and the amortized cost model.
//!
//! Frames are written once as raw tensors to local disk and read back inside
//! the timed loop, so measured frame times include loading.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::io::{read_image_tensor, write_image_tensor};
use crate::pipeline::{FrameOutcome, Pipeline, PipelineConfig, StageTimings};
use crate::settings::Settings;
use crate::synth::{approximation_error, generate_sequence, ApproximationError, SynthSequence};

/// Per-invocation costs in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostModel {
    pub c_feat: f64,
    pub c_flow: f64,
    pub c_warp: f64,
    /// One embedding pass over a pyramid; key frames with memory run two.
    pub c_embed: f64,
    pub c_agg: f64,
    pub c_det: f64,
    /// Reading one frame from disk. Zero when modelling compute alone.
    pub c_load: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c_feat, self.c_flow, self.c_warp, self.c_embed, self.c_agg, self.c_det, self.c_load,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config(format!("costs must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn key_time(&self, enable_ma: bool) -> f64 {
        let mut t = self.c_load + self.c_feat + self.c_det;
        if enable_ma {
            t += self.c_flow + 2.0 * self.c_embed + self.c_agg;
        }
        t
    }

    /// Limit of the amortized time as the key interval grows.
    pub fn nonkey_time(&self) -> f64 {
        self.c_load + self.c_flow + self.c_warp + self.c_det
    }

    pub fn baseline_time(&self) -> f64 {
        self.c_load + self.c_feat + self.c_det
    }

    /// Median per-invocation cost of each stage over `samples`.
    pub fn fit(samples: &[StageTimings], loads: &[Duration]) -> Self {
        let med = |pick: &dyn Fn(&StageTimings) -> Option<Duration>| {
            median(samples.iter().filter_map(pick).map(nanos).collect())
        };
        Self {
            c_feat: med(&|t| t.feat),
            c_flow: med(&|t| t.flow),
            c_warp: med(&|t| t.warp),
            c_embed: med(&|t| t.embed) / 2.0,
            c_agg: med(&|t| t.agg),
            c_det: med(&|t| t.det),
            c_load: median(loads.iter().copied().map(nanos).collect()),
        }
    }
}

/// Amortized nanoseconds per frame for `config`.
///
/// Panics if feature approximation is enabled with a key interval of zero.
pub fn predicted_frame_time(model: &CostModel, config: &PipelineConfig) -> f64 {
    if !config.enable_fa {
        return model.baseline_time();
    }
    let k = config.key_interval;
    assert!(k >= 1, "key interval must be at least 1");
    let key = model.key_time(config.enable_ma);
    (key + (k - 1) as f64 * model.nonkey_time()) / k as f64
}

fn nanos(d: Duration) -> f64 {
    d.as_secs_f64() * 1e9
}

/// Median of `v`; zero when empty.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A pipeline toggle set measured by the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub enable_fa: bool,
    pub enable_ma: bool,
    /// Reference frame rate and frame-level mAP for the corresponding
    /// trained GPU system. Printed for direction only.
    pub reference: Option<(f64, f64)>,
}

pub const BASELINE: Variant = Variant {
    name: "baseline",
    enable_fa: false,
    enable_ma: false,
    reference: Some((70.0, 67.32)),
};
pub const FA: Variant = Variant {
    name: "fa",
    enable_fa: true,
    enable_ma: false,
    reference: Some((85.0, 67.23)),
};
pub const FA_MA: Variant = Variant {
    name: "fa_ma",
    enable_fa: true,
    enable_ma: true,
    reference: Some((75.0, 70.92)),
};

impl Variant {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            enable_fa: self.enable_fa,
            enable_ma: self.enable_ma,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: &'static str,
    pub enable_fa: bool,
    pub enable_ma: bool,
    pub enable_scale_map: bool,
    pub key_interval: usize,
    pub frames: usize,
    pub extractor_calls: usize,
    pub mean_approx_error: f64,
    /// Median wall-clock nanoseconds per frame, loading included.
    pub measured_frame_ns: f64,
    pub predicted_frame_ns: f64,
    pub fitted: CostModel,
    pub reference: Option<(f64, f64)>,
}

impl BenchRow {
    pub fn measured_fps(&self) -> f64 {
        1e9 / self.measured_frame_ns
    }

    pub fn predicted_fps(&self) -> f64 {
        1e9 / self.predicted_frame_ns
    }

    /// `|measured - predicted| / predicted`.
    pub fn model_error(&self) -> f64 {
        (self.measured_frame_ns - self.predicted_frame_ns).abs() / self.predicted_frame_ns
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str = "variant,fa,ma,scale_map,key_interval,frames,extractor_calls,\
mean_approx_error,measured_fps,predicted_fps,measured_frame_ms,predicted_frame_ms,\
c_load_ms,c_feat_ms,c_flow_ms,c_warp_ms,c_embed_ms,c_agg_ms,c_det_ms,\
reference_fps,reference_fmap";

/// Columns of [`BENCH_CSV_HEADER`] that do not depend on timing.
pub const BENCH_STABLE_COLUMNS: &[&str] = &[
    "variant",
    "fa",
    "ma",
    "scale_map",
    "key_interval",
    "frames",
    "extractor_calls",
    "mean_approx_error",
    "reference_fps",
    "reference_fmap",
];

fn ms(ns: f64) -> String {
    format!("{:.6}", ns / 1e6)
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let c = &r.fitted;
            let (rf, rm) = match r.reference {
                Some((f, m)) => (format!("{f:.6}"), format!("{m:.6}")),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.enable_fa as u8,
                r.enable_ma as u8,
                r.enable_scale_map as u8,
                r.key_interval,
                r.frames,
                r.extractor_calls,
                r.mean_approx_error,
                r.measured_fps(),
                r.predicted_fps(),
                ms(r.measured_frame_ns),
                ms(r.predicted_frame_ns),
                ms(c.c_load),
                ms(c.c_feat),
                ms(c.c_flow),
                ms(c.c_warp),
                ms(c.c_embed),
                ms(c.c_agg),
                ms(c.c_det),
                rf,
                rm
            )
            .unwrap();
        }
        out
    }
}

/// Projects a CSV onto the named columns, keeping row order.
pub fn select_columns(csv: &str, columns: &[&str]) -> Result<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::config(format!("column {c} not in report")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = columns.join(",");
    out.push('\n');
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let picked: Vec<&str> = idx.iter().map(|&i| cells.get(i).copied().unwrap_or("")).collect();
        out.push_str(&picked.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// A clip written to disk as raw frame tensors.
#[derive(Debug)]
pub struct FrameStore {
    pub sequence: SynthSequence,
    pub paths: Vec<PathBuf>,
    _temp: Option<tempfile::TempDir>,
}

impl FrameStore {
    /// Generates the clip described by `settings` and writes its frames
    /// under `dir`, or a temporary directory when `None`.
    pub fn create(settings: &Settings, dir: Option<&Path>) -> Result<Self> {
        let sequence = generate_sequence(&settings.scene(), settings.seed)?;
        let (root, temp) = match dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                (d.to_path_buf(), None)
            }
            None => {
                let t = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let paths = sequence
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = root.join(format!("frame_{i:04}.fpt"));
                write_image_tensor(f, &p).map(|_| p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sequence,
            paths,
            _temp: temp,
        })
    }
}

/// One timed pass: wall time, per-frame outcomes, loads and extractor calls.
pub struct TimedRun {
    pub elapsed: Duration,
    pub outcomes: Vec<FrameOutcome>,
    pub loads: Vec<Duration>,
    pub extractor_calls: usize,
}

pub fn timed_run(config: &PipelineConfig, paths: &[PathBuf]) -> Result<TimedRun> {
    let mut pipeline = Pipeline::new(config.clone())?;
    let mut outcomes = Vec::with_capacity(paths.len());
    let mut loads = Vec::with_capacity(paths.len());
    let start = Instant::now();
    for p in paths {
        let t = Instant::now();
        let frame = read_image_tensor(p)?;
        loads.push(t.elapsed());
        outcomes.push(pipeline.step(&frame)?);
    }
    Ok(TimedRun {
        elapsed: start.elapsed(),
        outcomes,
        loads,
        extractor_calls: pipeline.extractor_calls(),
    })
}

/// Times `variant` over the stored clip: `warmup` discarded passes, then
/// the median of `repeats` passes.
pub fn measure(
    store: &FrameStore,
    base: &PipelineConfig,
    variant: Variant,
    warmup: usize,
    repeats: usize,
) -> Result<BenchRow> {
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    let config = variant.apply(base);
    config.validate()?;
    for _ in 0..warmup {
        timed_run(&config, &store.paths)?;
    }
    let n = store.paths.len();
    let mut totals = Vec::with_capacity(repeats);
    let mut samples = Vec::new();
    let mut loads = Vec::new();
    let mut calls = 0;
    for _ in 0..repeats {
        let run = timed_run(&config, &store.paths)?;
        totals.push(nanos(run.elapsed) / n as f64);
        samples.extend(run.outcomes.into_iter().map(|o| o.timings));
        loads.extend(run.loads);
        calls = run.extractor_calls;
    }
    let fitted = CostModel::fit(&samples, &loads);
    let mean_approx_error = if config.enable_fa {
        let k = config.key_interval;
        approximation_error(&store.sequence, &config, &[k])?[0].mean_abs
    } else {
        0.0
    };
    Ok(BenchRow {
        variant: variant.name,
        enable_fa: config.enable_fa,
        enable_ma: config.enable_ma,
        enable_scale_map: config.enable_scale_map,
        key_interval: config.key_interval,
        frames: n,
        extractor_calls: calls,
        mean_approx_error,
        measured_frame_ns: median(totals),
        predicted_frame_ns: predicted_frame_time(&fitted, &config),
        fitted,
        reference: variant.reference,
    })
}

/// Runs the baseline and both approximation variants over one generated
/// clip. `frames_dir` keeps the raw frames; otherwise they go to a
/// temporary directory.
pub fn run_benchmark(settings: &Settings, frames_dir: Option<&Path>) -> Result<BenchReport> {
    let store = FrameStore::create(settings, frames_dir)?;
    let base = settings.pipeline();
    let variants: Vec<Variant> = if !settings.enable_fa {
        vec![BASELINE]
    } else if settings.enable_ma {
        vec![BASELINE, FA, FA_MA]
    } else {
        vec![BASELINE, FA]
    };
    let rows = variants
        .into_iter()
        .map(|v| measure(&store, &base, v, settings.warmup, settings.repeats))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { rows })
}

/// Load a config file and benchmark it.
pub fn run_benchmark_file(path: impl AsRef<Path>) -> Result<BenchReport> {
    run_benchmark(&Settings::load(path)?, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub errors: Vec<ApproximationError>,
    pub fps: Vec<BenchRow>,
}

pub const ERROR_CSV_HEADER: &str = "key_interval,mean_abs_error,max_abs_error,compared_values";
pub const FPS_CSV_HEADER: &str =
    "key_interval,extractor_calls,measured_fps,predicted_fps,measured_frame_ms,predicted_frame_ms";

impl SweepReport {
    pub fn error_csv(&self) -> String {
        let mut out = format!("{ERROR_CSV_HEADER}\n");
        for e in &self.errors {
            writeln!(out, "{},{:.6},{:.6},{}", e.key_interval, e.mean_abs, e.max_abs, e.count).unwrap();
        }
        out
    }

    pub fn fps_csv(&self) -> String {
        let mut out = format!("{FPS_CSV_HEADER}\n");
        for r in &self.fps {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{},{}",
                r.key_interval,
                r.extractor_calls,
                r.measured_fps(),
                r.predicted_fps(),
                ms(r.measured_frame_ns),
                ms(r.predicted_frame_ns)
            )
            .unwrap();
        }
        out
    }
}

/// Error and frame rate against key interval for the configured toggles.
///
/// With `settings.parallel` the error curve is computed one thread per
/// interval; rows are still reported in ascending interval order. Timing is
/// always sequential.
pub fn sweep(settings: &Settings) -> Result<SweepReport> {
    let store = FrameStore::create(settings, None)?;
    let mut ks = settings.sweep_k.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::config("sweep_k must list intervals of at least 1"));
    }
    let base = PipelineConfig {
        enable_fa: true,
        ..settings.pipeline()
    };
    let errors = if settings.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = ks
                .iter()
                .map(|&k| {
                    let (seq, cfg) = (&store.sequence, &base);
                    s.spawn(move || approximation_error(seq, cfg, &[k]))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked").map(|mut v| v.remove(0)))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        approximation_error(&store.sequence, &base, &ks)?
    };
    let variant = if base.enable_ma { FA_MA } else { FA };
    let fps = ks
        .iter()
        .map(|&k| {
            let cfg = PipelineConfig {
                key_interval: k,
                ..base.clone()
            };
            let mut row = measure(&store, &cfg, variant, settings.warmup, settings.repeats)?;
            row.reference = None;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { errors, fps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CostModel {
        CostModel {
            c_feat: 100.0,
            c_det: 10.0,
            c_flow: 5.0,
            c_warp: 1.0,
            ..CostModel::default()
        }
    }

    fn config(fa: bool, ma: bool, k: usize) -> PipelineConfig {
        PipelineConfig {
            key_interval: k,
            enable_fa: fa,
            enable_ma: ma,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn worked_example() {
        let t = predicted_frame_time(&model(), &config(true, false, 10));
        assert!((t - 25.4).abs() < 1e-9);
        let base = predicted_frame_time(&model(), &config(false, false, 10));
        assert_eq!(base, 110.0);
        assert!((base / t - 4.3307).abs() < 1e-3);
    }

    #[test]
    fn interval_one_is_baseline_and_large_k_saturates() {
        let m = model();
        assert_eq!(predicted_frame_time(&m, &config(true, false, 1)), m.baseline_time());
        let far = predicted_frame_time(&m, &config(true, true, 1_000_000));
        assert!((far - m.nonkey_time()).abs() < 1e-3);
    }

    #[test]
    fn memory_adds_key_frame_work() {
        let m = CostModel {
            c_embed: 2.0,
            c_agg: 3.0,
            ..model()
        };
        let with = predicted_frame_time(&m, &config(true, true, 10));
        let without = predicted_frame_time(&m, &config(true, false, 10));
        assert!((with - without - (5.0 + 4.0 + 3.0) / 10.0).abs() < 1e-9);
    }

    #[test]
    fn fit_takes_medians_and_halves_embed() {
        let ms = Duration::from_millis;
        let samples = [
            StageTimings {
                feat: Some(ms(3)),
                embed: Some(ms(4)),
                det: Some(ms(1)),
                ..Default::default()
            },
            StageTimings {
                feat: Some(ms(5)),
                det: Some(ms(1)),
                ..Default::default()
            },
            StageTimings {
                feat: Some(ms(9)),
                det: Some(ms(2)),
                ..Default::default()
            },
        ];
        let m = CostModel::fit(&samples, &[ms(1)]);
        assert_eq!((m.c_feat, m.c_embed, m.c_det, m.c_flow), (5e6, 2e6, 1e6, 0.0));
        assert_eq!(m.c_load, 1e6);
    }

    #[test]
    fn column_projection() {
        let csv = "a,b,c\n1,2,3\n4,5,6\n";
        assert_eq!(select_columns(csv, &["c", "a"]).unwrap(), "c,a\n3,1\n6,4\n");
        assert!(select_columns(csv, &["z"]).is_err());
    }
}
