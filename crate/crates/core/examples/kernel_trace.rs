//! Per-kernel timing events from the warp and aggregation paths.

use flowprop::aggregation::{Aggregator, EmbeddingConfig};
use flowprop::flow::FlowPyramid;
use flowprop::trace::{EventLog, Kernel};
use flowprop::warp::warp_pyramid_traced;
use flowprop::{FeatureMap, FeaturePyramid, FlowField, Shape};

fn main() -> flowprop::Result<()> {
    let shapes = [Shape::new(32, 32, 32), Shape::new(16, 16, 32), Shape::new(8, 8, 32)];
    let pyr = FeaturePyramid::new(shapes.iter().map(|s| FeatureMap::filled(*s, 0.5)).collect())?;
    let flows: Vec<FlowField> = shapes.iter().map(|s| FlowField::constant(s.height, s.width, 0.5, -0.25)).collect();

    let mut log = EventLog::default();
    warp_pyramid_traced(&pyr, &flows, None, &mut log)?;
    let agg = Aggregator::new(&EmbeddingConfig { seed: 0 }, &shapes)?;
    agg.aggregate_traced(&pyr, &pyr, &FlowPyramid::identity(&shapes), false, &mut log)?;

    for k in [Kernel::Warp, Kernel::Embed, Kernel::Aggregate] {
        println!("{k:?}: {} events, {:.2?} total", log.count(k), log.total(k));
    }
    for e in log.events.iter().filter(|e| e.kernel == Kernel::Warp) {
        println!("  warp level {} took {:.2?}", e.level, e.elapsed);
    }
    Ok(())
}
