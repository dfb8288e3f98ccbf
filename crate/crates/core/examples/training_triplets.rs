//! Memory/key/target index sampling and evenly spread clip frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowprop::pipeline::{sample_clip_frames, select_training_triplet, triplet_from_offset};

fn main() -> flowprop::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let t = select_training_triplet(40, 10, 10, &mut rng)?;
        println!("mem {:2} key {:2} target {:2}", t.mem, t.key, t.target);
    }
    println!("clamped near the start: {:?}", triplet_from_offset(12, 8, 10));
    println!("15 of 150 frames: {:?}", sample_clip_frames(150, 15));
    Ok(())
}
