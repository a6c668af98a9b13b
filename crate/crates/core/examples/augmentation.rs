//! Applies the training augmentation to one image and checks the
//! standardized statistics.
//!
//!     cargo run --release --example augmentation

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rescaps::data::{center_crop, random_brightness, random_crop, standardize, synthetic, AugmentConfig, Split, BRIGHTNESS_RANGE};

fn stats(v: &[f32]) -> (f32, f32) {
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / n;
    (mean, var.sqrt())
}

fn main() -> rescaps::Result<()> {
    let data = synthetic::bars(4, 32, 4, Split::Train, 1)?;
    let image = data.image(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bright = random_brightness(&image, BRIGHTNESS_RANGE, &mut rng);
    let crop = random_crop(&bright, 24, &mut rng)?;
    let standard = standardize(&crop);
    for (name, img) in [("source", &image), ("brightness", &bright), ("random crop", &crop), ("standardized", &standard)] {
        let (m, s) = stats(&img.data);
        println!("{name:<13} {}x{}  mean {m:+.5}  std {s:.5}", img.height, img.width);
    }
    let eval = AugmentConfig::none(24).eval_sample(&image)?;
    assert_eq!(eval.target, center_crop(&image, 24)?);
    println!("evaluation path: deterministic center crop, input mean {:+.1e}", stats(&eval.input.data).0);
    Ok(())
}
