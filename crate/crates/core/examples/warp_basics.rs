//! Inverse bilinear warping of a small feature map, its validity mask, the
//! scale-map refinement and the backward pass.

use flowprop::warp::{apply_scale_map, bilinear_sample, warp_backward, warp_feature};
use flowprop::{FeatureMap, FlowField, ScaleMap, Shape};

fn print_channel(title: &str, map: &FeatureMap) {
    println!("{title}");
    for y in 0..map.height() {
        let row: Vec<String> = (0..map.width()).map(|x| format!("{:6.2}", map.get(y, x, 0))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> flowprop::Result<()> {
    let key = FeatureMap::from_fn(Shape::new(4, 4, 1), |y, x, _| (y * 4 + x) as f32)?;
    print_channel("key features", &key);

    // every output cell reads half a cell to the right
    let flow = FlowField::constant(4, 4, 0.5, 0.0);
    let out = warp_feature(&key, &flow)?;
    print_channel("warped by (+0.5, 0)", &out.warped);
    println!("valid cells: {} of 16 (the last column samples past the edge)", out.mask.count_valid());
    println!("sample at (1.5, 2.25): {:?}", bilinear_sample(&key, 1.5, 2.25));

    let scale = ScaleMap::filled(Shape::new(4, 4, 1), 0.5)?;
    print_channel("refined by a 0.5 scale map", &apply_scale_map(&out.warped, &scale)?);

    let upstream = FeatureMap::filled(key.shape(), 1.0);
    let (grad_features, grad_flow) = warp_backward(&key, &flow, &upstream)?;
    print_channel("d(sum)/d(key)", &grad_features);
    println!("d(sum)/d(flow) at (0, 0): {:?}", grad_flow.get(0, 0));
    Ok(())
}
