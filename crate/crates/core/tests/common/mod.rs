//! Shared fixtures for the integration tests: an in-memory synthetic
//! dataset and an on-disk PNG corpus with manifest, gaze, and config files.
//! Each test target uses the subset it needs.
#![allow(dead_code)]

use std::path::Path;

use visattn::data::Dataset;
use visattn::losses::AttentionRegion;
use visattn::rng::Rng;

/// Synthetic two-class set: a centered bright square over a noisy dark
/// background, small for class 0 and large for class 1. The size cue
/// survives contrast/brightness augmentation and needs no positional
/// information, and the gaze attention region matches the square.
pub fn synthetic_dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut regions = Vec::new();
    let mut paths = Vec::new();
    for i in 0..n {
        let label = i % 2;
        let mut px = vec![0.1f32; size * size];
        for v in px.iter_mut() {
            *v += 0.05 * rng.uniform() as f32;
        }
        let q = if label == 0 { size / 8 } else { 3 * size / 8 };
        let c = size / 2;
        for y in (c - q / 2)..(c + q / 2) {
            for x in (c - q / 2)..(c + q / 2) {
                px[y * size + x] = 0.95;
            }
        }
        images.push(px);
        labels.push(label);
        regions.push(Some(AttentionRegion::new(
            0.5,
            0.5,
            q as f64 / size as f64,
            q as f64 / size as f64,
        )));
        paths.push(format!("synthetic_{i:02}"));
    }
    Dataset { images, labels, regions, paths, size, channels: 1 }
}

/// Write the synthetic set to disk as grayscale PNGs plus `manifest.csv`
/// (with region columns and an explicit split), `gaze.csv` (point samples
/// clustered on each bright square), and a desk-scale `config.toml`.
/// The last `n_val` images go to the validation split.
pub fn write_corpus(dir: &Path, n: usize, size: usize, n_val: usize, seed: u64) {
    let ds = synthetic_dataset(n, size, seed);
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).unwrap();
    let mut rng = Rng::new(seed ^ 0xfeed);
    let mut manifest = String::from("image_path,label,cx,cy,h,w,split\n");
    let mut gaze = String::from("image_id,x,y\n");
    for i in 0..n {
        let name = format!("img_{i:02}.png");
        let bytes: Vec<u8> = ds.images[i]
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::GrayImage::from_raw(size as u32, size as u32, bytes).unwrap();
        img.save(images_dir.join(&name)).unwrap();
        let r = ds.regions[i].unwrap();
        let split = if i >= n - n_val { "val" } else { "train" };
        // names chosen so the lexicographic vocabulary preserves label order
        let class = if ds.labels[i] == 0 { "small" } else { "wide" };
        manifest.push_str(&format!(
            "images/{name},{class},{},{},{},{},{split}\n",
            r.cx, r.cy, r.h, r.w
        ));
        let (gx, gy) = (r.cx * size as f64, r.cy * size as f64);
        for _ in 0..30 {
            let x = (gx + rng.range(-5.0, 5.0)).round() as i64;
            let y = (gy + rng.range(-5.0, 5.0)).round() as i64;
            gaze.push_str(&format!("img_{i:02},{x},{y}\n"));
        }
    }
    std::fs::write(dir.join("manifest.csv"), manifest).unwrap();
    std::fs::write(dir.join("gaze.csv"), gaze).unwrap();
    std::fs::write(
        dir.join("config.toml"),
        format!(
            "image_size = {size}\npatch = 8\nwindow = 4\ndim = 16\nbatch_size = 4\n\
             epochs = 2\nearly_stop_patience = 20\nseed = 1\n\n\
             [lr]\ninitial_lr = 1e-3\ndecay_steps = 1000\ndecay_rate = 0.5\n\n\
             [hva]\nsigma = 6.0\nthreshold = 140\nconnectivity = 8\n"
        ),
    )
    .unwrap();
}
