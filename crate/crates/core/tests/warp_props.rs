use proptest::prelude::*;

use flowprop::warp::{apply_scale_map, warp_backward, warp_feature, warp_pyramid};
use flowprop::{FeatureMap, FeaturePyramid, FlowField, ScaleMap, Shape};

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..7, 1usize..7, 1usize..4).prop_map(|(h, w, c)| Shape::new(h, w, c))
}

fn map_and_flow(reach: f32) -> impl Strategy<Value = (FeatureMap, FlowField)> {
    shape().prop_flat_map(move |s| {
        (
            prop::collection::vec(-2.0f32..2.0, s.len()),
            prop::collection::vec(-reach..reach, s.area() * 2),
        )
            .prop_map(move |(d, f)| {
                (
                    FeatureMap::new(s, d).unwrap(),
                    FlowField::new(s.height, s.width, f).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn zero_flow_is_identity((map, _) in map_and_flow(1.0)) {
        let s = map.shape();
        let out = warp_feature(&map, &FlowField::zeros(s.height, s.width)).unwrap();
        prop_assert_eq!(&out.warped, &map);
        prop_assert_eq!(out.mask.count_valid(), s.area());
    }

    #[test]
    fn integer_shift_copies_cells((map, _) in map_and_flow(1.0), dx in -3i32..4, dy in -3i32..4) {
        let s = map.shape();
        let flow = FlowField::constant(s.height, s.width, dx as f32, dy as f32);
        let out = warp_feature(&map, &flow).unwrap();
        for y in 0..s.height {
            for x in 0..s.width {
                let (sy, sx) = (y as i32 + dy, x as i32 + dx);
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < s.height && (sx as usize) < s.width;
                prop_assert_eq!(out.mask.get(y, x), inside);
                for c in 0..s.channels {
                    let expect = if inside { map.get(sy as usize, sx as usize, c) } else { 0.0 };
                    prop_assert_eq!(out.warped.get(y, x, c), expect);
                }
            }
        }
    }

    #[test]
    fn valid_cells_sample_inside_the_grid((map, flow) in map_and_flow(3.0)) {
        let s = map.shape();
        let out = warp_feature(&map, &flow).unwrap();
        for y in 0..s.height {
            for x in 0..s.width {
                if out.mask.get(y, x) {
                    let (dx, dy) = flow.get(y, x);
                    let (sx, sy) = (x as f32 + dx, y as f32 + dy);
                    prop_assert!(sx > -1.0 && sy > -1.0);
                    prop_assert!(sx < s.width as f32 && sy < s.height as f32);
                }
            }
        }
    }

    #[test]
    fn warp_is_linear_in_features((a, flow) in map_and_flow(3.0), k in -2.0f32..2.0) {
        let s = a.shape();
        let b = FeatureMap::from_fn(s, |y, x, c| ((y * 7 + x * 3 + c) % 5) as f32 - 2.0).unwrap();
        let mix = FeatureMap::from_fn(s, |y, x, c| k * a.get(y, x, c) + b.get(y, x, c)).unwrap();
        let wa = warp_feature(&a, &flow).unwrap().warped;
        let wb = warp_feature(&b, &flow).unwrap().warped;
        let wm = warp_feature(&mix, &flow).unwrap().warped;
        for ((m, p), q) in wm.data().iter().zip(wa.data()).zip(wb.data()) {
            prop_assert!((m - (k * p + q)).abs() < 1e-4);
        }
    }

    #[test]
    fn feature_gradient_is_the_adjoint((map, flow) in map_and_flow(3.0)) {
        let s = map.shape();
        let up = FeatureMap::from_fn(s, |y, x, c| ((y + 2 * x + 3 * c) % 4) as f32 - 1.5).unwrap();
        let (gd, _) = warp_backward(&map, &flow, &up).unwrap();
        let warped = warp_feature(&map, &flow).unwrap().warped;
        let lhs: f64 = warped.data().iter().zip(up.data()).map(|(a, b)| f64::from(a * b)).sum();
        let rhs: f64 = gd.data().iter().zip(map.data()).map(|(a, b)| f64::from(a * b)).sum();
        prop_assert!((lhs - rhs).abs() < 1e-3 * (1.0 + lhs.abs()));
    }

    #[test]
    fn unit_scale_map_changes_nothing((map, _) in map_and_flow(1.0)) {
        let s = map.shape();
        let full = ScaleMap::ones(s);
        prop_assert_eq!(&apply_scale_map(&map, &full).unwrap(), &map);
    }
}

#[test]
fn scale_map_multiplies_per_channel() {
    let s = Shape::new(1, 2, 2);
    let map = FeatureMap::new(s, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let scale = ScaleMap::new(s, vec![2.0, 0.5, 0.0, 1.0]).unwrap();
    assert_eq!(apply_scale_map(&map, &scale).unwrap().data(), &[2.0, 1.0, 0.0, 4.0]);
    assert!(ScaleMap::new(s, vec![-1.0, 0.0, 0.0, 0.0]).is_err());
    assert!(apply_scale_map(&map, &ScaleMap::ones(Shape::new(1, 2, 1))).is_err());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let map = FeatureMap::zeros(Shape::new(3, 3, 1));
    let err = warp_feature(&map, &FlowField::zeros(2, 3)).unwrap_err().to_string();
    assert!(err.contains("3x3") && err.contains("2x3"), "{err}");
}

#[test]
fn pyramid_warps_each_level_with_its_flow() {
    let shapes = [Shape::new(4, 4, 2), Shape::new(2, 2, 2)];
    let pyr = FeaturePyramid::new(
        shapes
            .iter()
            .map(|s| FeatureMap::from_fn(*s, |y, x, c| (y * 10 + x + c) as f32).unwrap())
            .collect(),
    )
    .unwrap();
    let flows = vec![FlowField::constant(4, 4, 1.0, 0.0), FlowField::zeros(2, 2)];
    let out = warp_pyramid(&pyr, &flows, None).unwrap();
    assert_eq!(out.pyramid.level(0).get(0, 0, 0), 1.0);
    assert!(!out.masks[0].get(0, 3));
    assert_eq!(out.pyramid.level(1), pyr.level(1));
    assert!(warp_pyramid(&pyr, &flows[..1], None).is_err());
}
