//! Plug in a different flow source: here exact motion from the synthetic
//! clip, which reconstructs object features without error.

use flowprop::extract::{FeatureExtractor, ToyExtractor};
use flowprop::pipeline::{FrameRole, Pipeline, PipelineConfig};
use flowprop::settings::Settings;
use flowprop::synth::{generate_sequence, GroundTruthFlow};

fn main() -> flowprop::Result<()> {
    let settings = Settings {
        frames: 8,
        speed: 4,
        enable_ma: false,
        ..Settings::default()
    };
    let seq = generate_sequence(&settings.scene(), 0)?;
    let config = PipelineConfig {
        key_interval: 4,
        ..settings.pipeline()
    };
    let extractor = ToyExtractor::new(config.extractor.clone())?;
    let mut pipeline = Pipeline::with_providers(
        config,
        Box::new(extractor.clone()),
        Box::new(GroundTruthFlow::new(seq.clone())),
    )?;
    for (i, frame) in seq.frames.iter().enumerate() {
        if pipeline.step(frame)?.role != FrameRole::NonKey {
            continue;
        }
        let approx = pipeline.current_features().expect("features").level(0).clone();
        let truth = extractor.extract(frame)?.level(0).clone();
        // a cell well inside the first object
        let (x, y) = seq.config.objects[0].position(i);
        let (cy, cx) = ((y as usize + 16) / 4, (x as usize + 16) / 4);
        let err = approx
            .cell(cy, cx)
            .iter()
            .zip(truth.cell(cy, cx))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        println!("frame {i}: max error at object cell ({cy}, {cx}) = {err:.2e}");
    }
    Ok(())
}
