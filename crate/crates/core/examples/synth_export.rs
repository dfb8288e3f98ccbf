//! Generate a clip of translating textured boxes and export it as pixmaps
//! with a manifest.

use flowprop::synth::{generate_sequence, SynthConfig};

fn main() -> flowprop::Result<()> {
    let config = SynthConfig {
        frames: 6,
        ..SynthConfig::default()
    };
    let seq = generate_sequence(&config, 7)?;
    let dir = std::env::temp_dir().join("flowprop-synth-example");
    seq.export(&dir)?;
    println!("wrote {} frames to {}", seq.len(), dir.display());
    print!("{}", std::fs::read_to_string(dir.join("manifest.txt")).expect("manifest"));
    println!("frame 5 -> 0 displacement of object 0: {:?} px", seq.displacement(0, 5, 0));
    Ok(())
}
