use proptest::prelude::*;

use flowprop::io::{decode_ppm, decode_tensor, encode_ppm, encode_tensor, read_tensor, write_tensor, TENSOR_HEADER_LEN};
use flowprop::{Error, FeatureMap, Image, Shape};

fn map() -> impl Strategy<Value = FeatureMap> {
    (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| {
        let s = Shape::new(h, w, c);
        prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), s.len())
            .prop_map(move |d| FeatureMap::new(s, d).unwrap())
    })
}

fn offset(e: Error) -> u64 {
    match e {
        Error::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn tensors_round_trip_bit_exact(m in map()) {
        let bytes = encode_tensor(&m);
        prop_assert_eq!(bytes.len(), TENSOR_HEADER_LEN + 4 * m.shape().len());
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.data().iter().zip(m.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncation_reports_the_end(m in map(), cut in 1usize..40) {
        let bytes = encode_tensor(&m);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert_eq!(offset(decode_tensor(&bytes[..keep]).unwrap_err()), keep as u64);
    }

    #[test]
    fn pixmaps_round_trip_to_a_level(h in 1usize..8, w in 1usize..8, seed in any::<u8>()) {
        let data: Vec<f32> = (0..h * w * 3).map(|i| ((i as u32 * 37 + u32::from(seed)) % 256) as f32 / 255.0).collect();
        let img = Image::new(h, w, data).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn corrupt_headers_point_at_the_fault() {
    let m = FeatureMap::zeros(Shape::new(2, 2, 1));
    let mut bytes = encode_tensor(&m);
    bytes[3] ^= 0xff;
    assert_eq!(offset(decode_tensor(&bytes).unwrap_err()), 3);
    let mut bytes = encode_tensor(&m);
    bytes.push(0);
    assert_eq!(offset(decode_tensor(&bytes).unwrap_err()), (TENSOR_HEADER_LEN + 16) as u64);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = FeatureMap::from_fn(Shape::new(3, 2, 2), |y, x, c| (y * 4 + x * 2 + c) as f32).unwrap();
    let p = dir.path().join("m.fpt");
    write_tensor(&m, &p).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), m);
    assert!(matches!(read_tensor(dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn pixmap_comments_and_bad_magic() {
    let mut bytes = b"P6\n# a comment\n1 1\n255\n".to_vec();
    bytes.extend([255, 0, 51]);
    let img = decode_ppm(&bytes).unwrap();
    assert_eq!(img.pixel(0, 0), &[1.0, 0.0, 0.2]);
    assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
}
