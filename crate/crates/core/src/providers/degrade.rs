use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PerceptionResult;
use crate::raster::Mask;
use crate::seeds;

/// Synthetic segmentation errors: morphological dilation then erosion with
/// disc structuring elements, then independent per-pixel flips.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskDegradation {
    pub dilation_radius: u32,
    pub erosion_radius: u32,
    /// Probability that any one pixel is inverted.
    pub flip_rate: f64,
    pub seed: u64,
}

impl MaskDegradation {
    pub fn is_identity(&self) -> bool {
        self.dilation_radius == 0 && self.erosion_radius == 0 && self.flip_rate <= 0.0
    }
}

fn disc_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Dilation (`any = true`) or erosion (`any = false`) by a disc. Pixels
/// beyond the border count as background.
fn morph(mask: &Mask, radius: u32, any: bool) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(radius);
    let d = mask.dims();
    let (w, h) = (d.width as i64, d.height as i64);
    let mut out = Mask::zeros(d.width, d.height);
    for y in 0..h {
        for x in 0..w {
            let mut hits = offsets.iter().map(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && mask.at(nx as usize, ny as usize)
            });
            let on = if any { hits.any(|b| b) } else { hits.all(|b| b) };
            out.set((y * w + x) as usize, on);
        }
    }
    out
}

fn degrade_one(mask: &Mask, deg: &MaskDegradation, stream: &str) -> Mask {
    let mut m = morph(mask, deg.dilation_radius, true);
    m = morph(&m, deg.erosion_radius, false);
    let rate = deg.flip_rate.clamp(0.0, 1.0);
    if rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(deg.seed, stream, 0));
        for i in 0..m.dims().len() {
            if rng.random::<f64>() < rate {
                let v = m.get(i);
                m.set(i, !v);
            }
        }
    }
    m
}

/// Applies `degradation` to both masks; depth and latency pass through.
/// Pure given `degradation.seed`.
pub fn degrade_masks(result: &PerceptionResult, degradation: &MaskDegradation) -> PerceptionResult {
    PerceptionResult {
        robot: degrade_one(&result.robot, degradation, "degrade-robot"),
        object: degrade_one(&result.object, degradation, "degrade-object"),
        depth: result.depth.clone(),
        latency: result.latency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::mask_iou;
    use crate::providers::Latency;

    fn half_filled(n: usize) -> Mask {
        Mask::from_bools(n, n, (0..n * n).map(|i| i % n < n / 2)).unwrap()
    }

    fn result(m: Mask) -> PerceptionResult {
        PerceptionResult { robot: m.clone(), object: m, depth: None, latency: Latency::default() }
    }

    #[test]
    fn zero_degradation_is_identity() {
        let r = result(half_filled(16));
        assert!(degrade_masks(&r, &MaskDegradation::default()).same_rasters(&r));
    }

    #[test]
    fn full_flip_is_complement() {
        let m = half_filled(16);
        let d = degrade_masks(&result(m.clone()), &MaskDegradation { flip_rate: 1.0, seed: 3, ..Default::default() });
        assert_eq!(d.robot, m.complement());
        assert_eq!(mask_iou(&d.object, &m).unwrap(), 0.0);
    }

    #[test]
    fn dilation_and_erosion() {
        let mut m = Mask::zeros(7, 7);
        m.set(3 * 7 + 3, true);
        let grown = morph(&m, 1, true);
        assert_eq!(grown.count(), 5);
        assert_eq!(morph(&grown, 1, false), m);
    }

    #[test]
    fn deterministic_given_seed() {
        let r = result(half_filled(32));
        let d = MaskDegradation { flip_rate: 0.2, dilation_radius: 1, seed: 77, ..Default::default() };
        assert!(degrade_masks(&r, &d).same_rasters(&degrade_masks(&r, &d)));
        let other = MaskDegradation { seed: 78, ..d };
        assert!(!degrade_masks(&r, &d).same_rasters(&degrade_masks(&r, &other)));
    }

    /// Monte-Carlo estimate of the mean IoU under independent flips, using
    /// its own generator and a direct count.
    fn monte_carlo_iou(mask: &[bool], rate: f64, trials: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut total = 0.0;
        for _ in 0..trials {
            let (mut inter, mut union) = (0u32, 0u32);
            for &b in mask {
                let flipped = if rng.random::<f64>() < rate { !b } else { b };
                inter += u32::from(b && flipped);
                union += u32::from(b || flipped);
            }
            total += inter as f64 / union as f64;
        }
        total / trials as f64
    }

    #[test]
    fn flip_iou_matches_monte_carlo() {
        let m = half_filled(32);
        let bits: Vec<bool> = m.iter().collect();
        let expected = monte_carlo_iou(&bits, 0.1, 10_000);
        // 0.9 * 512 / (512 + 0.1 * 512)
        assert!((expected - 0.818).abs() < 0.01, "oracle {expected}");
        let d = degrade_masks(&result(m.clone()), &MaskDegradation { flip_rate: 0.1, seed: 5, ..Default::default() });
        let got = mask_iou(&d.robot, &m).unwrap();
        // one draw; per-draw std is about 0.012
        assert!((got - expected).abs() < 0.04, "{got} vs {expected}");
    }

    #[test]
    fn iou_decreases_with_flip_rate() {
        let m = half_filled(32);
        let mut last = 1.1;
        for rate in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let mean: f64 = (0..20)
                .map(|s| {
                    let d = degrade_masks(
                        &result(m.clone()),
                        &MaskDegradation { flip_rate: rate, seed: s, ..Default::default() },
                    );
                    mask_iou(&d.robot, &m).unwrap()
                })
                .sum::<f64>()
                / 20.0;
            assert!(mean < last);
            last = mean;
        }
    }
}
