//! Fixed coordinate feature maps: the per-level sawtooth transform that
//! tiles basis grids over the volume, and the One-Blob encoding fed to the
//! MLP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawtoothConfig {
    pub frequencies: Vec<f64>,
}

impl SawtoothConfig {
    /// `f_i = 2 + 1.2 (i - 1)` for `i = 1..=levels`.
    pub fn new(levels: usize) -> Self {
        Self {
            frequencies: (0..levels).map(|i| 2.0 + 1.2 * i as f64).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.frequencies.len()
    }

    /// Transform at zero-based `level`.
    #[inline]
    pub fn apply(&self, p: [f64; 3], level: usize) -> [f64; 3] {
        let f = self.frequencies[level];
        [sawtooth1(p[0], f), sawtooth1(p[1], f), sawtooth1(p[2], f)]
    }
}

/// `(x f) mod (2/f)`, rescaled by `f/2` onto [0, 1).
#[inline]
pub fn sawtooth1(x: f64, f: f64) -> f64 {
    let period = 2.0 / f;
    let raw = (x * f).rem_euclid(period);
    let out = raw * (f / 2.0);
    if out >= 1.0 {
        0.0
    } else {
        out
    }
}

/// Sawtooth at one-based level `i`, as the component-wise map on a point.
pub fn sawtooth(p: [f64; 3], i: usize, cfg: &SawtoothConfig) -> Result<[f64; 3]> {
    if i == 0 || i > cfg.levels() {
        return Err(Error::Contract(format!("level {i} outside 1..={}", cfg.levels())));
    }
    Ok(cfg.apply(p, i - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneBlobConfig {
    pub n_bins: usize,
    /// Kernel width in bin units.
    pub sigma: f64,
}

impl Default for OneBlobConfig {
    fn default() -> Self {
        Self { n_bins: 32, sigma: 1.0 }
    }
}

impl OneBlobConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 4 {
            return Err(Error::Config(format!("one-blob n_bins must be >= 4, got {}", self.n_bins)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("one-blob sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        3 * self.n_bins
    }

    /// Writes the 3·n_bins features for `p` into `out`.
    ///
    /// Each axis gets a Gaussian bump `exp(-((c_j - u) / s)^2)` evaluated at
    /// the bin centers `c_j = (j + 0.5) / n`, with `s = sigma / n`, and
    /// normalized to sum to one.
    pub fn encode_into(&self, p: [f64; 3], out: &mut [f64]) {
        let n = self.n_bins;
        debug_assert_eq!(out.len(), 3 * n);
        let inv_s = n as f64 / self.sigma;
        for (axis, block) in out.chunks_exact_mut(n).enumerate() {
            let u = p[axis];
            let mut sum = 0.0;
            for (j, b) in block.iter_mut().enumerate() {
                let d = ((j as f64 + 0.5) / n as f64 - u) * inv_s;
                *b = (-d * d).exp();
                sum += *b;
            }
            let inv = 1.0 / sum;
            block.iter_mut().for_each(|b| *b *= inv);
        }
    }

    pub fn encode(&self, p: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.encode_into(p, &mut out);
        out
    }
}

pub fn oneblob(p: [f64; 3], cfg: &OneBlobConfig) -> Vec<f64> {
    cfg.encode(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frequencies() {
        let cfg = SawtoothConfig::new(6);
        let expected = [2.0, 3.2, 4.4, 5.6, 6.8, 8.0];
        for (f, e) in cfg.frequencies.iter().zip(expected) {
            assert!((f - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sawtooth_examples() {
        let cfg = SawtoothConfig::new(6);
        for i in 1..=6 {
            assert_eq!(sawtooth([0.0; 3], i, &cfg).unwrap(), [0.0; 3]);
        }
        // (0.6 * 2) mod 1 = 0.2, rescale factor 1
        let s = sawtooth([0.6, 0.0, 0.0], 1, &cfg).unwrap();
        assert!((s[0] - 0.2).abs() < 1e-12);
        assert!(sawtooth([0.1; 3], 0, &cfg).is_err());
        assert!(sawtooth([0.1; 3], 7, &cfg).is_err());
    }

    fn near_wrap(x: f64, f: f64) -> bool {
        let phase = x * f * f / 2.0;
        (phase - phase.round()).abs() < 1e-3 * f * f
    }

    #[test]
    fn sawtooth_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = 8.0;
        let period = 2.0 / (f * f);
        let mut checked = 0;
        while checked < 100 {
            let x: f64 = rng.gen_range(0.0..1.0 - period);
            if near_wrap(x, f) || near_wrap(x + period, f) {
                continue;
            }
            assert!((sawtooth1(x, f) - sawtooth1(x + period, f)).abs() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn sawtooth_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for f in SawtoothConfig::new(6).frequencies {
            for _ in 0..100 {
                let x: f64 = rng.gen_range(0.01..0.99);
                let h = 1e-6;
                if near_wrap(x - h, f) || near_wrap(x + h, f) || near_wrap(x, f) {
                    continue;
                }
                let slope = (sawtooth1(x + h, f) - sawtooth1(x - h, f)) / (2.0 * h);
                assert!((slope - f * f / 2.0).abs() < 1e-4 * f * f, "f={f} x={x} slope={slope}");
            }
        }
    }

    #[test]
    fn oneblob_peak_at_bin_center() {
        let cfg = OneBlobConfig { n_bins: 16, sigma: 1.0 };
        let u = (5.0 + 0.5) / 16.0;
        let e = cfg.encode([u, 0.5, 0.0]);
        let x = &e[..16];
        let peak = x.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(x[5], peak);
    }

    #[test]
    fn oneblob_symmetric_about_midpoint() {
        let cfg = OneBlobConfig::default();
        let e = cfg.encode([0.5, 0.5, 0.5]);
        for axis in 0..3 {
            let b = &e[32 * axis..32 * axis + 32];
            assert!((b[15] - b[16]).abs() < 1e-6);
            // independent evaluation of the kernel
            let k = |j: f64| (-(((j + 0.5) / 32.0 - 0.5) * 32.0).powi(2)).exp();
            assert!((b[15] / b[14] - k(15.0) / k(14.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(OneBlobConfig { n_bins: 3, sigma: 1.0 }.validate().is_err());
        assert!(OneBlobConfig { n_bins: 8, sigma: 0.0 }.validate().is_err());
        assert!(OneBlobConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn sawtooth_in_unit_interval(x in 0.0f64..=1.0, level in 1usize..=6) {
            let cfg = SawtoothConfig::new(6);
            let s = sawtooth([x, x, x], level, &cfg).unwrap();
            prop_assert!(s.iter().all(|c| (0.0..1.0).contains(c)));
        }

        #[test]
        fn oneblob_blocks_sum_to_one(x in 0.0f64..=1.0, y in 0.0f64..=1.0, z in 0.0f64..=1.0, n in 4usize..48) {
            let cfg = OneBlobConfig { n_bins: n, sigma: 1.0 };
            let e = cfg.encode([x, y, z]);
            for b in e.chunks(n) {
                prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(b.iter().all(|&a| a >= 0.0));
            }
        }

        #[test]
        fn oneblob_is_local(x in 0.0f64..=1.0, sigma in 0.5f64..3.0) {
            let cfg = OneBlobConfig { n_bins: 32, sigma };
            let e = cfg.encode([x, 0.0, 0.0]);
            let peak = e[..32].iter().cloned().fold(0.0, f64::max);
            for j in 0..32 {
                let dist_bins = ((j as f64 + 0.5) / 32.0 - x).abs() * 32.0;
                if dist_bins > 4.0 * sigma {
                    prop_assert!(e[j] < 1e-4 * peak);
                }
            }
        }
    }

    #[test]
    fn oneblob_is_continuous() {
        let cfg = OneBlobConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let delta = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let p: [f64; 3] = [rng.gen_range(0.0..1.0 - delta), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let a = cfg.encode(p);
            let b = cfg.encode([p[0] + delta, p[1], p[2]]);
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(diff / delta);
        }
        // kernel derivative is bounded by sqrt(2/e) * n / sigma
        assert!(worst < 32.0, "empirical Lipschitz constant {worst}");
    }
}
