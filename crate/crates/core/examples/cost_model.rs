//! Amortized frame time under the key-frame schedule, and a measured fit on
//! a small clip.

use flowprop::bench::{measure, predicted_frame_time, CostModel, FrameStore, BASELINE, FA};
use flowprop::pipeline::PipelineConfig;
use flowprop::settings::Settings;

fn main() -> flowprop::Result<()> {
    let model = CostModel {
        c_feat: 100.0,
        c_det: 10.0,
        c_flow: 5.0,
        c_warp: 1.0,
        ..CostModel::default()
    };
    let base = PipelineConfig::default();
    let baseline = predicted_frame_time(&model, &base.clone().baseline());
    for k in [1, 2, 5, 10, 20, 100] {
        let t = predicted_frame_time(&model, &PipelineConfig { key_interval: k, enable_ma: false, ..base.clone() });
        println!("k={k:3}: {t:7.2} ns/frame, speedup {:.2}x", baseline / t);
    }
    println!("limit: {} ns/frame", model.nonkey_time());

    let settings = Settings {
        frames: 20,
        repeats: 3,
        ..Settings::default()
    };
    let store = FrameStore::create(&settings, None)?;
    for v in [BASELINE, FA] {
        let row = measure(&store, &settings.pipeline(), v, 1, settings.repeats)?;
        println!(
            "{:<8} measured {:.1} fps, model {:.1} fps, calls {}",
            row.variant,
            row.measured_fps(),
            row.predicted_fps(),
            row.extractor_calls
        );
    }
    Ok(())
}
