//! Training-triplet and clip-frame index sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// Frame indices `(mem, key, target)` within one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingTriplet {
    pub mem: usize,
    pub key: usize,
    pub target: usize,
}

/// Places the key frame `offset` frames before `target`, clamped so that the
/// memory frame `mem_to_key` frames earlier still exists.
pub fn triplet_from_offset(target: usize, offset: usize, mem_to_key: usize) -> TrainingTriplet {
    let key = target.saturating_sub(offset).max(mem_to_key);
    TrainingTriplet {
        mem: key - mem_to_key,
        key,
        target,
    }
}

/// Draws a triplet with a uniform key-to-target offset in `[0, key_to_target]`.
///
/// Targets are drawn uniformly from the range where no clamping is needed
/// whenever the clip is long enough; shorter clips fall back to every target
/// that admits a memory frame.
pub fn select_training_triplet(
    clip_len: usize,
    mem_to_key: usize,
    key_to_target: usize,
    rng: &mut impl Rng,
) -> Result<TrainingTriplet> {
    if mem_to_key == 0 {
        return Err(Error::Sampling(
            "memory-to-key offset must be at least one frame".into(),
        ));
    }
    if clip_len <= mem_to_key {
        return Err(Error::Sampling(format!(
            "clip of {clip_len} frames is too short for a memory offset of {mem_to_key}"
        )));
    }
    let lo = if clip_len > mem_to_key + key_to_target {
        mem_to_key + key_to_target
    } else {
        mem_to_key
    };
    let target = rng.random_range(lo..clip_len);
    let offset = rng.random_range(0..=key_to_target);
    Ok(triplet_from_offset(target, offset, mem_to_key))
}

/// `n` indices spread evenly over a clip of `len` frames, rounded to the
/// nearest frame (halves up) and deduplicated in order.
pub fn sample_clip_frames(len: usize, n: usize) -> Vec<usize> {
    if len == 0 || n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let span = (len - 1) as u64;
    let den = (n - 1) as u64;
    let mut out: Vec<usize> = (0..n as u64)
        .map(|j| ((2 * j * span + den) / (2 * den)) as usize)
        .collect();
    out.dedup();
    out
}
