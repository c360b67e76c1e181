//! Eye-gaze preprocessing: accumulate raw gaze samples into a count map,
//! blur it with a Gaussian, quantize to bytes, and extract the largest
//! above-threshold connected component as a normalized attention box.

use std::collections::VecDeque;

use thiserror::Error;

use crate::losses::AttentionRegion;

#[derive(Error, Debug)]
pub enum GazeError {
    #[error("gaze point {index} at ({x}, {y}) is outside the {w}x{h} image")]
    OutOfRange { index: usize, x: i64, y: i64, w: usize, h: usize },
    #[error("no attention region above threshold")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<V, E = GazeError> = std::result::Result<V, E>;

/// One raw gaze sample.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GazeRecord {
    pub image_id: String,
    pub x: i64,
    pub y: i64,
    pub timestamp: Option<f64>,
}

/// Parameters of the attention-region pipeline.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HvaConfig {
    /// Gaussian standard deviation, in pixels.
    pub sigma: f64,
    /// Byte threshold applied to the quantized map.
    pub threshold: u8,
    /// Pixel connectivity for component labeling: 4 or 8.
    pub connectivity: u8,
}

impl Default for HvaConfig {
    fn default() -> Self {
        HvaConfig { sigma: 64.0, threshold: 140, connectivity: 8 }
    }
}

impl HvaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(GazeError::Invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return Err(GazeError::Invalid(format!(
                "connectivity must be 4 or 8, got {}",
                self.connectivity
            )));
        }
        Ok(())
    }
}

/// Row-major H×W float heatmap.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

/// Row-major H×W byte heatmap.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapU8 {
    pub values: Vec<u8>,
    pub h: usize,
    pub w: usize,
}

/// Count gaze samples per pixel.
pub fn accumulate(points: &[GazeRecord], h: usize, w: usize) -> Result<Heatmap> {
    let mut values = vec![0.0; h * w];
    for (index, p) in points.iter().enumerate() {
        if p.x < 0 || p.y < 0 || p.x as usize >= w || p.y as usize >= h {
            return Err(GazeError::OutOfRange { index, x: p.x, y: p.y, w, h });
        }
        values[p.y as usize * w + p.x as usize] += 1.0;
    }
    Ok(Heatmap { values, h, w })
}

/// 1-D Gaussian taps out to radius `ceil(4 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Reflect an index into `[0, n)` (edge pixels not repeated).
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_filter(map: &Heatmap, sigma: f64) -> Result<Heatmap> {
    if sigma <= 0.0 {
        return Err(GazeError::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (h, w) = (map.h, map.w);
    // rows
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = reflect(x as i64 + i as i64 - radius, w as i64);
                acc += kv * map.values[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sy = reflect(y as i64 + i as i64 - radius, h as i64);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(Heatmap { values: out, h, w })
}

/// Min-max scale to 0..=255, rounding half away from zero. An all-constant
/// nonzero map becomes all 255; an all-zero map stays zero.
pub fn quantize(map: &Heatmap) -> HeatmapU8 {
    let max = map.values.iter().cloned().fold(0.0f64, f64::max);
    let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min).min(max);
    let values = if max <= 0.0 {
        vec![0u8; map.values.len()]
    } else if max == min {
        vec![255u8; map.values.len()]
    } else {
        map.values
            .iter()
            .map(|&v| {
                let scaled = (v - min) / (max - min) * 255.0;
                // round half away from zero (values are nonnegative here)
                (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
            })
            .collect()
    };
    HeatmapU8 { values, h: map.h, w: map.w }
}

/// Threshold the byte map, label connected components, and return the
/// normalized bounding box of the largest one.
pub fn largest_component_bbox(
    map: &HeatmapU8,
    threshold: u8,
    connectivity: u8,
) -> Result<AttentionRegion> {
    if connectivity != 4 && connectivity != 8 {
        return Err(GazeError::Invalid(format!(
            "connectivity must be 4 or 8, got {connectivity}"
        )));
    }
    let (h, w) = (map.h, map.w);
    let mask: Vec<bool> = map.values.iter().map(|&v| v >= threshold).collect();
    if !mask.iter().any(|&m| m) {
        return Err(GazeError::EmptyMask);
    }
    let neighbors: &[(i64, i64)] = if connectivity == 4 {
        &[(0, 1), (0, -1), (1, 0), (-1, 0)]
    } else {
        &[
            (0, 1),
            (0, -1),
            (1, 0),
            (-1, 0),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ]
    };
    let mut seen = vec![false; h * w];
    let mut best: Option<(usize, usize, usize, usize, usize)> = None; // (area, x0, y0, x1, y1)
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let (mut area, mut x0, mut y0, mut x1, mut y1) =
            (0usize, w - 1, h - 1, 0usize, 0usize);
        while let Some(idx) = queue.pop_front() {
            let (y, x) = (idx / w, idx % w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for &(dy, dx) in neighbors {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if mask[nidx] && !seen[nidx] {
                    seen[nidx] = true;
                    queue.push_back(nidx);
                }
            }
        }
        if best.map_or(true, |(a, ..)| area > a) {
            best = Some((area, x0, y0, x1, y1));
        }
    }
    let (_, x0, y0, x1, y1) = best.unwrap();
    // tight pixel box [x0, x1] x [y0, y1], normalized by image extent
    let bw = (x1 - x0 + 1) as f64 / w as f64;
    let bh = (y1 - y0 + 1) as f64 / h as f64;
    let cx = (x0 as f64 + (x1 - x0 + 1) as f64 / 2.0) / w as f64;
    let cy = (y0 as f64 + (y1 - y0 + 1) as f64 / 2.0) / h as f64;
    Ok(AttentionRegion::new(cx, cy, bh, bw))
}

/// Full pipeline: counts, blur, quantize, box.
pub fn hva_pipeline(
    points: &[GazeRecord],
    h: usize,
    w: usize,
    cfg: &HvaConfig,
) -> Result<AttentionRegion> {
    cfg.validate()?;
    let counts = accumulate(points, h, w)?;
    let blurred = gaussian_filter(&counts, cfg.sigma)?;
    let quantized = quantize(&blurred);
    largest_component_bbox(&quantized, cfg.threshold, cfg.connectivity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: i64, y: i64) -> GazeRecord {
        GazeRecord { image_id: "img".into(), x, y, timestamp: None }
    }

    #[test]
    fn accumulate_counts_and_bounds() {
        let empty = accumulate(&[], 4, 4).unwrap();
        assert!(empty.values.iter().all(|&v| v == 0.0));
        let m = accumulate(&[pt(1, 2), pt(1, 2), pt(0, 0)], 4, 4).unwrap();
        assert_eq!(m.values[2 * 4 + 1], 2.0);
        assert_eq!(m.values[0], 1.0);
        let err = accumulate(&[pt(4, 0)], 4, 4).unwrap_err();
        assert!(err.to_string().contains("point 0"));
    }

    #[test]
    fn gaussian_impulse_is_symmetric_and_mass_preserving() {
        let mut m = Heatmap { values: vec![0.0; 31 * 31], h: 31, w: 31 };
        m.values[15 * 31 + 15] = 1.0;
        let b = gaussian_filter(&m, 2.0).unwrap();
        let at = |y: usize, x: usize| b.values[y * 31 + x];
        assert!(at(15, 15) >= b.values.iter().cloned().fold(0.0, f64::max));
        for d in 1..5 {
            assert!((at(15 + d, 15) - at(15 - d, 15)).abs() < 1e-12);
            assert!((at(15, 15 + d) - at(15, 15 - d)).abs() < 1e-12);
            assert!((at(15 + d, 15) - at(15, 15 + d)).abs() < 1e-12);
        }
        let mass: f64 = b.values.iter().sum();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn separable_filter_matches_dense_convolution_oracle() {
        let (h, w, sigma) = (32usize, 32usize, 3.0);
        let mut vals = vec![0.0; h * w];
        let mut state = 0x243f6a8885a308d3u64;
        for v in vals.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64;
        }
        let m = Heatmap { values: vals, h, w };
        let fast = gaussian_filter(&m, sigma).unwrap();

        // dense 2-D oracle with the same reflect padding
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let mut dense = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for ky in 0..k.len() as i64 {
                    for kx in 0..k.len() as i64 {
                        let sy = reflect(y + ky - r, h as i64);
                        let sx = reflect(x + kx - r, w as i64);
                        acc += k[ky as usize] * k[kx as usize] * m.values[sy * w + sx];
                    }
                }
                dense[y as usize * w + x as usize] = acc;
            }
        }
        for i in 0..h * w {
            assert!((fast.values[i] - dense[i]).abs() < 1e-5, "pixel {i}");
        }
    }

    #[test]
    fn quantize_conventions() {
        let zero = Heatmap { values: vec![0.0; 4], h: 2, w: 2 };
        assert_eq!(quantize(&zero).values, vec![0; 4]);
        let constant = Heatmap { values: vec![3.5; 4], h: 2, w: 2 };
        assert_eq!(quantize(&constant).values, vec![255; 4]);
        let ramp = Heatmap { values: vec![0.0, 1.0, 2.0, 4.0], h: 2, w: 2 };
        let q = quantize(&ramp);
        assert_eq!(q.values[3], 255);
        assert_eq!(q.values[0], 0);
        // 1/4 and 2/4 of 255, rounded half away from zero
        assert_eq!(q.values[1], 64);
        assert_eq!(q.values[2], 128);
    }

    #[test]
    fn bbox_selects_larger_component() {
        // 10x10: a 3x3 blob (area 9) and a 1x2 blob (area 2)
        let mut v = vec![0u8; 100];
        for y in 1..4 {
            for x in 1..4 {
                v[y * 10 + x] = 200;
            }
        }
        v[8 * 10 + 7] = 200;
        v[8 * 10 + 8] = 200;
        let m = HeatmapU8 { values: v, h: 10, w: 10 };
        let r = largest_component_bbox(&m, 140, 8).unwrap();
        assert!((r.cx - 0.25).abs() < 1e-12, "cx {}", r.cx);
        assert!((r.cy - 0.25).abs() < 1e-12);
        assert!((r.w - 0.3).abs() < 1e-12);
        assert!((r.h - 0.3).abs() < 1e-12);
    }

    #[test]
    fn four_vs_eight_connectivity() {
        // two pixels touching only diagonally
        let mut v = vec![0u8; 16];
        v[0] = 255; // (0,0)
        v[5] = 255; // (1,1)
        v[3] = 255; // (0,3) isolated single pixel
        let m = HeatmapU8 { values: v, h: 4, w: 4 };
        let r8 = largest_component_bbox(&m, 140, 8).unwrap();
        // 8-connectivity joins the diagonal pair into a 2x2-extent box
        assert!((r8.w - 0.5).abs() < 1e-12 && (r8.h - 0.5).abs() < 1e-12);
        let r4 = largest_component_bbox(&m, 140, 4).unwrap();
        // 4-connectivity sees three 1-pixel components; ties resolve to the
        // first in scan order, a 1-pixel box
        assert!((r4.w - 0.25).abs() < 1e-12 && (r4.h - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = HeatmapU8 { values: vec![10; 16], h: 4, w: 4 };
        let err = largest_component_bbox(&m, 140, 8).unwrap_err();
        assert_eq!(err.to_string(), "no attention region above threshold");
    }

    #[test]
    fn component_selection_matches_flood_fill_oracle() {
        // brute-force oracle: repeated scans unioning neighbor labels
        fn oracle_largest(mask: &[bool], h: usize, w: usize, conn: u8) -> Option<(usize, usize, usize, usize, usize)> {
            let mut labels: Vec<usize> = (0..h * w).collect();
            let mut changed = true;
            while changed {
                changed = false;
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        if !mask[i] {
                            continue;
                        }
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if dy == 0 && dx == 0 {
                                    continue;
                                }
                                if conn == 4 && dy.abs() + dx.abs() != 1 {
                                    continue;
                                }
                                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                                    continue;
                                }
                                let j = ny as usize * w + nx as usize;
                                if mask[j] && labels[j] < labels[i] {
                                    labels[i] = labels[j];
                                    changed = true;
                                }
                            }
                        }
                    }
                }
            }
            let mut best: Option<(usize, usize, usize, usize, usize, usize)> = None;
            let roots: std::collections::BTreeSet<usize> =
                (0..h * w).filter(|&i| mask[i]).map(|i| labels[i]).collect();
            for root in roots {
                let px: Vec<usize> = (0..h * w).filter(|&i| mask[i] && labels[i] == root).collect();
                let area = px.len();
                let x0 = px.iter().map(|i| i % w).min().unwrap();
                let x1 = px.iter().map(|i| i % w).max().unwrap();
                let y0 = px.iter().map(|i| i / w).min().unwrap();
                let y1 = px.iter().map(|i| i / w).max().unwrap();
                let first = *px.iter().min().unwrap();
                let better = match best {
                    None => true,
                    // area first, then earliest scan-order pixel, matching
                    // the implementation's first-found-wins tie rule
                    Some((a, f, ..)) => area > a || (area == a && first < f),
                };
                if better {
                    best = Some((area, first, x0, y0, x1 - x0 + 1, y1 - y0 + 1));
                }
            }
            best.map(|(a, _, x0, y0, bw, bh)| (a, x0, y0, bw, bh))
        }

        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for case in 0..100 {
            let (h, w) = (8usize, 8usize);
            let conn = if case % 2 == 0 { 8 } else { 4 };
            let mask: Vec<bool> = (0..h * w).map(|_| next() % 3 == 0).collect();
            let map = HeatmapU8 {
                values: mask.iter().map(|&m| if m { 200 } else { 0 }).collect(),
                h,
                w,
            };
            let got = largest_component_bbox(&map, 140, conn);
            match oracle_largest(&mask, h, w, conn) {
                None => assert!(got.is_err()),
                Some((_, x0, y0, bw, bh)) => {
                    let r = got.unwrap();
                    assert!((r.w - bw as f64 / w as f64).abs() < 1e-12, "case {case}");
                    assert!((r.h - bh as f64 / h as f64).abs() < 1e-12, "case {case}");
                    assert!((r.cx - (x0 as f64 + bw as f64 / 2.0) / w as f64).abs() < 1e-12);
                    assert!((r.cy - (y0 as f64 + bh as f64 / 2.0) / h as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pipeline_centers_on_a_tight_cluster() {
        let (h, w) = (256usize, 256usize);
        let points: Vec<GazeRecord> = (0..100)
            .map(|i| pt(128 + (i % 5) - 2, 128 + (i / 20) - 2))
            .collect();
        let cfg = HvaConfig::default();
        let r = hva_pipeline(&points, h, w, &cfg).unwrap();
        assert!((r.cx - 0.5).abs() < 0.02, "cx {}", r.cx);
        assert!((r.cy - 0.5).abs() < 0.02, "cy {}", r.cy);
        // deterministic
        assert_eq!(hva_pipeline(&points, h, w, &cfg).unwrap(), r);
    }

    #[test]
    fn pipeline_is_translation_equivariant_in_the_interior() {
        let (h, w) = (128usize, 128usize);
        let cfg = HvaConfig { sigma: 8.0, threshold: 140, connectivity: 8 };
        let base: Vec<GazeRecord> = (0..50).map(|i| pt(50 + (i % 3), 60 + (i % 4))).collect();
        let shifted: Vec<GazeRecord> =
            base.iter().map(|p| pt(p.x + 10, p.y - 15)).collect();
        let a = hva_pipeline(&base, h, w, &cfg).unwrap();
        let b = hva_pipeline(&shifted, h, w, &cfg).unwrap();
        assert!((b.cx - a.cx - 10.0 / w as f64).abs() <= 1.0 / w as f64);
        assert!((b.cy - a.cy + 15.0 / h as f64).abs() <= 1.0 / h as f64);
    }
}
