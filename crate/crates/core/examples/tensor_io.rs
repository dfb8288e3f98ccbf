//! Write a feature map in the binary tensor format, read it back, and show
//! how a damaged file is reported.

use flowprop::io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
use flowprop::{FeatureMap, Shape};

fn main() -> flowprop::Result<()> {
    let map = FeatureMap::from_fn(Shape::new(2, 3, 2), |y, x, c| (y * 6 + x * 2 + c) as f32 * 0.25)?;
    let bytes = encode_tensor(&map);
    println!("{} -> {} bytes (20 header + {} payload)", map.shape(), bytes.len(), bytes.len() - 20);

    let dir = std::env::temp_dir().join("flowprop-tensor-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("map.fpt");
    write_tensor(&map, &path)?;
    assert_eq!(read_tensor(&path)?, map);
    println!("round trip through {} is exact", path.display());

    let err = decode_tensor(&bytes[..bytes.len() - 3]).unwrap_err();
    println!("truncated file: {err}");
    Ok(())
}
