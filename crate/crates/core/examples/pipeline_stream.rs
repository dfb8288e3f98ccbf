//! Stream a synthetic clip through the key-frame pipeline and report what
//! each frame did.

use flowprop::pipeline::{Pipeline, PipelineConfig};
use flowprop::settings::Settings;
use flowprop::synth::generate_sequence;

fn main() -> flowprop::Result<()> {
    let settings = Settings {
        frames: 12,
        key_interval: 4,
        ..Settings::default()
    };
    let seq = generate_sequence(&settings.scene(), settings.seed)?;
    let config: PipelineConfig = settings.pipeline();
    let mut pipeline = Pipeline::new(config)?;
    println!("levels: {:?}", pipeline.level_shapes().iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for frame in &seq.frames {
        let out = pipeline.step(frame)?;
        println!(
            "frame {:2} {:<8} detections {:3} extractor calls {:2} time {:.2?}",
            out.index,
            out.role.as_str(),
            out.detections.len(),
            pipeline.extractor_calls(),
            out.timings.total()
        );
    }
    Ok(())
}
