//! Position-wise similarity weights and the fusion of warped memory with the
//! current key frame.

use flowprop::aggregation::{aggregate_features, similarity_weights, Aggregator, EmbeddingConfig};
use flowprop::flow::FlowPyramid;
use flowprop::{FeatureMap, FeaturePyramid, Shape};

fn main() -> flowprop::Result<()> {
    let s = Shape::new(1, 2, 2);
    // cell 0: memory orthogonal to current; cell 1: identical
    let mem = FeatureMap::new(s, vec![1.0, 0.0, 0.3, 0.4])?;
    let cur = FeatureMap::new(s, vec![0.0, 1.0, 0.3, 0.4])?;
    let w = similarity_weights(&mem, &cur)?;
    for p in 0..2 {
        println!("cell {p}: w_mem {:.4}, w_cur {:.4}", w.memory()[p], w.current()[p]);
    }
    println!("fused: {:?}", aggregate_features(&mem, &cur, &w)?.data());

    let shapes = [Shape::new(8, 8, 8), Shape::new(4, 4, 16)];
    let pyr = |v: f32| {
        FeaturePyramid::new(
            shapes
                .iter()
                .map(|s| FeatureMap::from_fn(*s, |y, x, c| v * ((y + x + c) % 3) as f32).unwrap())
                .collect(),
        )
    };
    let aggregator = Aggregator::new(&EmbeddingConfig { seed: 1 }, &shapes)?;
    let identity = FlowPyramid::identity(&shapes);
    let fused = aggregator.aggregate(&pyr(1.0)?, &pyr(2.0)?, &identity, true)?;
    for l in 0..shapes.len() {
        println!("level {l} embedding channels {:?}", aggregator.embedding(l).channel_plan());
    }
    println!("fused level 0, cell (0, 1): {:?}", fused.level(0).cell(0, 1));
    Ok(())
}
