//! Subcommand bodies behind the `flowprop` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::{run_benchmark, sweep as run_sweep, BenchReport, SweepReport};
use crate::detect::{detections_to_csv, evaluate_frame_map, LabeledBox};
use crate::error::{Error, Result};
use crate::io::read_ppm;
use crate::pipeline::Pipeline;
use crate::settings::Settings;
use crate::synth::generate_sequence;
use crate::tensor::Image;
use crate::verify::{run_all, SuiteReport};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub key_interval: Option<usize>,
    pub no_fa: bool,
    pub no_ma: bool,
    pub no_scale_map: bool,
}

pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Settings> {
    let mut s = match config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    if let Some(k) = o.key_interval {
        s.key_interval = k;
    }
    s.enable_fa &= !o.no_fa;
    s.enable_ma &= !o.no_ma;
    s.enable_scale_map &= !o.no_scale_map;
    Ok(s)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// `frame_*.ppm` files of `dir` in name order.
pub fn load_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "ppm")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("frame_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!("no frame_*.ppm files in {}", dir.display())));
    }
    paths.iter().map(read_ppm).collect()
}

pub const FRAMES_CSV_HEADER: &str = "frame_index,role,detections,extractor_calls,\
feat_ms,flow_ms,warp_ms,embed_ms,agg_ms,det_ms,total_ms";

/// Columns of [`FRAMES_CSV_HEADER`] that do not depend on timing.
pub const FRAMES_STABLE_COLUMNS: &[&str] = &["frame_index", "role", "detections", "extractor_calls"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub extractor_calls: usize,
    /// Frame-level mAP against generated ground truth; `None` for external
    /// input.
    pub map: Option<f64>,
    pub fps: f64,
}

/// Runs the pipeline over the configured clip and writes `detections.csv`,
/// `frames.csv` and `summary.csv` under `out`.
pub fn run(settings: &Settings, out: &Path) -> Result<RunSummary> {
    let (frames, truth): (Vec<Image>, Option<Vec<Vec<LabeledBox>>>) = match &settings.input {
        Some(dir) => (load_frames(dir)?, None),
        None => {
            let seq = generate_sequence(&settings.scene(), settings.seed)?;
            (seq.frames, Some(seq.boxes))
        }
    };
    let config = settings.pipeline();
    let mut pipeline = Pipeline::new(config.clone())?;
    let mut detections = Vec::with_capacity(frames.len());
    let mut table = format!("{FRAMES_CSV_HEADER}\n");
    let ms = |d: Option<std::time::Duration>| format!("{:.6}", d.map_or(0.0, |d| d.as_secs_f64() * 1e3));
    let start = Instant::now();
    for frame in &frames {
        let o = pipeline.step(frame)?;
        let t = &o.timings;
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{}",
            o.index,
            o.role.as_str(),
            o.detections.len(),
            pipeline.extractor_calls(),
            ms(t.feat),
            ms(t.flow),
            ms(t.warp),
            ms(t.embed),
            ms(t.agg),
            ms(t.det),
            ms(Some(t.total()))
        )
        .unwrap();
        detections.push((o.index, o.detections));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let map = match &truth {
        Some(gt) => {
            let per_frame: Vec<_> = detections.iter().map(|(_, d)| d.clone()).collect();
            Some(evaluate_frame_map(&per_frame, gt, settings.map_iou)?.map)
        }
        None => None,
    };
    let summary = RunSummary {
        frames: frames.len(),
        extractor_calls: pipeline.extractor_calls(),
        map,
        fps: frames.len() as f64 / elapsed.max(f64::MIN_POSITIVE),
    };
    write(out, "detections.csv", &detections_to_csv(&detections))?;
    write(out, "frames.csv", &table)?;
    let mut text = String::from("key,value\n");
    writeln!(text, "frames,{}", summary.frames).unwrap();
    writeln!(text, "key_interval,{}", config.key_interval).unwrap();
    writeln!(text, "fa,{}", config.enable_fa as u8).unwrap();
    writeln!(text, "ma,{}", config.enable_ma as u8).unwrap();
    writeln!(text, "scale_map,{}", config.enable_scale_map as u8).unwrap();
    writeln!(text, "extractor_calls,{}", summary.extractor_calls).unwrap();
    if let Some(m) = map {
        writeln!(text, "map,{m:.6}").unwrap();
    }
    write(out, "summary.csv", &text)?;
    Ok(summary)
}

/// Writes `bench.csv` and keeps the raw frames under `out/frames`.
pub fn bench(settings: &Settings, out: &Path) -> Result<BenchReport> {
    let report = run_benchmark(settings, Some(&out.join("frames")))?;
    write(out, "bench.csv", &report.to_csv())?;
    Ok(report)
}

/// Writes `error_vs_k.csv` and `fps_vs_k.csv`.
pub fn sweep(settings: &Settings, out: &Path) -> Result<SweepReport> {
    let report = run_sweep(settings)?;
    write(out, "error_vs_k.csv", &report.error_csv())?;
    write(out, "fps_vs_k.csv", &report.fps_csv())?;
    Ok(report)
}

/// Exports the generated clip as pixmaps plus a manifest.
pub fn synth(settings: &Settings, out: &Path) -> Result<usize> {
    let seq = generate_sequence(&settings.scene(), settings.seed)?;
    seq.export(out)?;
    Ok(seq.len())
}

pub fn verify(settings: &Settings) -> Result<Vec<SuiteReport>> {
    run_all(settings.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Settings {
        Settings {
            frames: 6,
            height: 64,
            width: 64,
            key_interval: 3,
            channels: vec![4, 4],
            object_size: 16,
            ..Settings::default()
        }
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides {
            seed: Some(9),
            key_interval: Some(4),
            no_ma: true,
            ..Overrides::default()
        };
        let s = resolve(None, &o).unwrap();
        assert_eq!((s.seed, s.key_interval, s.enable_fa, s.enable_ma), (9, 4, true, false));
    }

    #[test]
    fn run_writes_outputs_and_counts_calls() {
        let dir = tempfile::tempdir().unwrap();
        let s = run(&small(), dir.path()).unwrap();
        assert_eq!((s.frames, s.extractor_calls), (6, 2));
        assert!(s.map.is_some());
        let frames = fs::read_to_string(dir.path().join("frames.csv")).unwrap();
        assert_eq!(frames.lines().count(), 7);
        assert!(frames.lines().nth(1).unwrap().starts_with("0,initial,"));
        let det = fs::read_to_string(dir.path().join("detections.csv")).unwrap();
        assert!(det.starts_with("frame_index,class_id,score"));
    }

    #[test]
    fn run_reads_exported_frames() {
        let dir = tempfile::tempdir().unwrap();
        let s = small();
        synth(&s, &dir.path().join("clip")).unwrap();
        let ext = Settings {
            input: Some(dir.path().join("clip")),
            ..s
        };
        let summary = run(&ext, &dir.path().join("out")).unwrap();
        assert_eq!((summary.frames, summary.map), (6, None));
    }
}
