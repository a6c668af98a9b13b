//! Writes an image tensor and a label tensor to the canonical container
//! and loads them back as a dataset.
//!
//!     cargo run --release --example canonical_container

use rescaps::data::{load_canonical, read_canonical, write_canonical, CanonicalTensor, Split};

fn main() -> rescaps::Result<()> {
    let dir = tempfile_dir();
    let (images, labels) = (dir.join("images.caps"), dir.join("labels.caps"));
    let pixels: Vec<u8> = (0..3 * 4 * 4).map(|i| (i * 5) as u8).collect();
    let image_t = CanonicalTensor::from_u8(vec![3, 4, 4, 1], pixels);
    write_canonical(&images, &image_t)?;
    write_canonical(&labels, &CanonicalTensor::from_u8(vec![3], vec![2, 0, 1]))?;
    assert_eq!(read_canonical(&images)?, image_t);
    let bytes = std::fs::read(&images).map_err(|e| rescaps::Error::io(&images, e))?;
    println!("{} bytes, magic {:?}", bytes.len(), std::str::from_utf8(&bytes[..4]).unwrap());
    let data = load_canonical(&images, &labels, Split::Test, 3)?;
    println!("{} images of {:?}, labels {:?}", data.len(), &data.dims()[1..], data.labels());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("rescaps-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
