//! HSV histograms for sky matching: 8 hue x 8 saturation x 8 value bins,
//! hue in [0, 360), saturation and value in [0, 1], normalized to sum 1.

use serde::{Deserialize, Serialize};

pub const HUE_BINS: usize = 8;
pub const SAT_BINS: usize = 8;
pub const VAL_BINS: usize = 8;
pub const HIST_BINS: usize = HUE_BINS * SAT_BINS * VAL_BINS;

/// Standard RGB to HSV. Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h.rem_euclid(360.0), s, max)
}

pub fn hsv_bin(h: f64, s: f64, v: f64) -> usize {
    let hb = ((h / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
    let sb = ((s * SAT_BINS as f64) as usize).min(SAT_BINS - 1);
    let vb = ((v * VAL_BINS as f64) as usize).min(VAL_BINS - 1);
    (hb * SAT_BINS + sb) * VAL_BINS + vb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HsvHistogram(pub Vec<f64>);

impl HsvHistogram {
    pub fn from_pixels(pixels: impl IntoIterator<Item = [u8; 3]>) -> Self {
        let mut counts = vec![0u64; HIST_BINS];
        let mut n = 0u64;
        for px in pixels {
            let (h, s, v) = rgb_to_hsv(px);
            counts[hsv_bin(h, s, v)] += 1;
            n += 1;
        }
        let denom = n.max(1) as f64;
        Self(counts.into_iter().map(|c| c as f64 / denom).collect())
    }

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == HIST_BINS && self.0.iter().all(|x| x.is_finite() && *x >= 0.0)
    }

    pub fn l1(&self, other: &HsvHistogram) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Bin-wise mean, accumulated in the given order.
    pub fn mean<'a>(hists: impl IntoIterator<Item = &'a HsvHistogram>) -> Option<Self> {
        let mut acc = vec![0.0; HIST_BINS];
        let mut n = 0usize;
        for h in hists {
            for (a, x) in acc.iter_mut().zip(h.0.iter()) {
                *a += x;
            }
            n += 1;
        }
        (n > 0).then(|| Self(acc.into_iter().map(|a| a / n as f64).collect()))
    }
}
