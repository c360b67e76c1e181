//! Stateless random photometric augmentation: contrast, brightness, and
//! (for color inputs) hue/saturation jitter, applied in that order and
//! clipped to [0, 1]. Every draw comes from a seeded counter-based RNG, so
//! the same seed always yields the same output.

use crate::rng::Rng;
use crate::tensor::{el, Element, Result, TensorError};

/// Jitter ranges for one input pathway.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentProfile {
    pub contrast_lower: f64,
    pub contrast_upper: f64,
    pub brightness_max_delta: f64,
    pub hue_max_delta: f64,
    pub saturation_lower: f64,
    pub saturation_upper: f64,
}

impl AugmentProfile {
    pub fn validate(&self) -> Result<()> {
        if self.contrast_lower > self.contrast_upper
            || self.saturation_lower > self.saturation_upper
            || self.brightness_max_delta < 0.0
            || self.hue_max_delta < 0.0
        {
            return Err(TensorError::Invalid(format!("bad augment profile {self:?}")));
        }
        Ok(())
    }

    /// No-op profile: contrast and saturation pinned to 1, deltas 0.
    pub const IDENTITY: AugmentProfile = AugmentProfile {
        contrast_lower: 1.0,
        contrast_upper: 1.0,
        brightness_max_delta: 0.0,
        hue_max_delta: 0.0,
        saturation_lower: 1.0,
        saturation_upper: 1.0,
    };

    /// Hard jitter for the teacher's global pathway.
    pub const TEACHER_GLOBAL: AugmentProfile = AugmentProfile {
        contrast_lower: 2.0,
        contrast_upper: 2.2,
        brightness_max_delta: 0.8,
        hue_max_delta: 0.8,
        saturation_lower: 2.0,
        saturation_upper: 2.5,
    };

    /// Hard jitter for the teacher's focal pathway.
    pub const TEACHER_FOCAL: AugmentProfile = AugmentProfile {
        contrast_lower: 2.8,
        contrast_upper: 3.0,
        brightness_max_delta: 0.8,
        hue_max_delta: 0.8,
        saturation_lower: 2.0,
        saturation_upper: 2.5,
    };

    /// Soft jitter for the student's global pathway.
    pub const STUDENT_GLOBAL: AugmentProfile = AugmentProfile {
        contrast_lower: 0.5,
        contrast_upper: 1.0,
        brightness_max_delta: 0.5,
        hue_max_delta: 0.5,
        saturation_lower: 1.5,
        saturation_upper: 2.0,
    };

    /// Soft jitter for the student's focal pathway.
    pub const STUDENT_FOCAL: AugmentProfile = AugmentProfile {
        contrast_lower: 1.0,
        contrast_upper: 1.5,
        brightness_max_delta: 0.5,
        hue_max_delta: 0.5,
        saturation_lower: 1.5,
        saturation_upper: 2.0,
    };
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    } / 6.0;
    (h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor() as i64 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Apply a profile to one image stored channel-last as `[h, w, c]` with
/// values in [0, 1]. Hue/saturation only apply when `c == 3`.
pub fn augment<T: Element>(
    image: &[T],
    h: usize,
    w: usize,
    c: usize,
    profile: &AugmentProfile,
    seed: u64,
) -> Result<Vec<T>> {
    profile.validate()?;
    if image.len() != h * w * c || c == 0 {
        return Err(TensorError::Invalid(format!(
            "augment got {} pixels for shape {h}x{w}x{c}",
            image.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let contrast = rng.range(profile.contrast_lower, profile.contrast_upper);
    let brightness = rng.range(-profile.brightness_max_delta, profile.brightness_max_delta);

    // contrast about the per-channel mean, then brightness shift
    let n_px = (h * w) as f64;
    let mut means = vec![0.0f64; c];
    for (i, &v) in image.iter().enumerate() {
        means[i % c] += v.to_f64().unwrap();
    }
    for m in means.iter_mut() {
        *m /= n_px;
    }
    let mut out: Vec<f64> = image
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % c];
            m + contrast * (v.to_f64().unwrap() - m) + brightness
        })
        .collect();

    if c == 3 {
        let hue_shift = rng.range(-profile.hue_max_delta, profile.hue_max_delta);
        let sat = rng.range(profile.saturation_lower, profile.saturation_upper);
        for px in out.chunks_exact_mut(3) {
            let (r, g, b) = (px[0].clamp(0.0, 1.0), px[1].clamp(0.0, 1.0), px[2].clamp(0.0, 1.0));
            let (hh, ss, vv) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(hh + hue_shift, (ss * sat).clamp(0.0, 1.0), vv);
            px[0] = r2;
            px[1] = g2;
            px[2] = b2;
        }
    }

    Ok(out.into_iter().map(|v| el(v.clamp(0.0, 1.0))).collect())
}
