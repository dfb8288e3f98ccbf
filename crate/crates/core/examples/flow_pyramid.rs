//! Estimate motion between two frames by block matching and resize it to
//! every feature level.

use flowprop::extract::ExtractorConfig;
use flowprop::flow::{build_flow_pyramid, estimate_flow, BlockMatchConfig};
use flowprop::synth::{generate_sequence, ObjectSpec, SynthConfig};

fn main() -> flowprop::Result<()> {
    let scene = SynthConfig {
        height: 96,
        width: 96,
        frames: 4,
        noise_amplitude: 0.0,
        objects: vec![ObjectSpec {
            class_id: 0,
            texture_seed: 3,
            size: (32, 32),
            start: (20, 30),
            velocity: (4, 0),
        }],
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&scene, 0)?;
    let levels = ExtractorConfig::halving(0, (96, 96), 4, &[8, 8, 8, 8]).levels;

    let base = estimate_flow(&seq.frames[0], &seq.frames[1], &BlockMatchConfig::default(), levels[0].spatial())?;
    let (x, y) = scene.objects[0].position(1);
    let cell = ((y as usize + 16) / 4, (x as usize + 16) / 4);
    println!("object moved +4 px; flow at its centre cell {cell:?}: {:?} grid units", base.flow.get(cell.0, cell.1));

    let pyramid = build_flow_pyramid(&base, &levels)?;
    for (l, f) in pyramid.flows.iter().enumerate() {
        let c = (cell.0 >> l, cell.1 >> l);
        println!("level {l}: {}x{} grid, flow {:?}", f.height(), f.width(), f.get(c.0, c.1));
    }
    Ok(())
}
