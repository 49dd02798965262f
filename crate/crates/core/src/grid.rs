//! Dense scalar lattices over the unit cube with trilinear reads and
//! gradient scatter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight enclosing lattice nodes of a point and their trilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub index: [u32; 8],
    pub weight: [f64; 8],
}

/// A scalar lattice of `R³` nodes spanning [0, 1]³ with spacing `1/(R-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrid {
    resolution: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl LevelGrid {
    pub fn zeros(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Shape(format!("grid resolution must be >= 2, got {resolution}")));
        }
        let n = resolution.pow(3);
        Ok(Self {
            resolution,
            values: vec![0.0; n],
            grad: vec![0.0; n],
        })
    }

    pub fn filled(resolution: usize, value: f64) -> Result<Self> {
        let mut g = Self::zeros(resolution)?;
        g.values.fill(value);
        Ok(g)
    }

    pub fn random(resolution: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut g = Self::zeros(resolution)?;
        for v in &mut g.values {
            *v = rng.gen_range(-scale..=scale);
        }
        Ok(g)
    }

    /// Node values sampled from `f` at lattice positions.
    pub fn from_fn(resolution: usize, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let mut g = Self::zeros(resolution)?;
        let h = 1.0 / (resolution - 1) as f64;
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let idx = g.node(i, j, k);
                    g.values[idx] = f([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        Ok(g)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    /// Enclosing nodes and weights. `p` must already lie in the unit cube.
    #[inline]
    pub fn corners(&self, p: [f64; 3]) -> Corners {
        debug_assert!(p.iter().all(|c| (0.0..=1.0).contains(c)));
        let r = self.resolution;
        let last = (r - 2) as f64;
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let x = p[a] * (r - 1) as f64;
            let cell = x.floor().min(last);
            base[a] = cell as usize;
            t[a] = x - cell;
        }
        let stride = [1usize, r, r * r];
        let origin = base[0] + r * (base[1] + r * base[2]);
        let mut index = [0u32; 8];
        let mut weight = [0.0; 8];
        for c in 0..8 {
            let mut idx = origin;
            let mut w = 1.0;
            for a in 0..3 {
                if c >> a & 1 == 1 {
                    idx += stride[a];
                    w *= t[a];
                } else {
                    w *= 1.0 - t[a];
                }
            }
            index[c] = idx as u32;
            weight[c] = w;
        }
        Corners { index, weight }
    }

    #[inline]
    pub fn blend(&self, c: &Corners) -> f64 {
        let mut acc = 0.0;
        for n in 0..8 {
            acc += self.values[c.index[n] as usize] * c.weight[n];
        }
        acc
    }

    pub fn trilerp(&self, p: [f64; 3]) -> Result<f64> {
        check_domain(p)?;
        Ok(self.blend(&self.corners(p)))
    }

    /// Adds `upstream` times each corner weight into `grad`.
    pub fn trilerp_backward(&mut self, p: [f64; 3], upstream: f64) -> Result<()> {
        check_domain(p)?;
        let c = self.corners(p);
        self.scatter(&c, upstream);
        Ok(())
    }

    #[inline]
    pub fn scatter(&mut self, c: &Corners, upstream: f64) {
        for n in 0..8 {
            self.grad[c.index[n] as usize] += upstream * c.weight[n];
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub(crate) fn check_domain(p: [f64; 3]) -> Result<()> {
    if p.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::Domain(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PyramidKind {
    Coefficient,
    Basis,
}

/// K scalar grids forming one factor family.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPyramid {
    pub kind: PyramidKind,
    pub levels: Vec<LevelGrid>,
}

impl GridPyramid {
    pub fn resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(LevelGrid::resolution).collect()
    }

    pub fn param_count(&self) -> usize {
        self.levels.iter().map(LevelGrid::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.levels.iter_mut().for_each(LevelGrid::zero_grad);
    }
}

/// Geometric basis-grid resolutions from `r_min` to `r_max` over `levels`
/// levels: `R_i = floor(r_min * g^(i-1))`, `g = (r_max / r_min)^(1/(K-1))`.
pub fn resolution_schedule(r_min: usize, r_max: usize, levels: usize) -> Result<Vec<usize>> {
    if r_min < 2 || r_max < r_min {
        return Err(Error::Schedule(format!("need 2 <= r_min <= r_max, got {r_min}, {r_max}")));
    }
    match levels {
        0 => return Err(Error::Schedule("at least one level is required".into())),
        1 if r_min == r_max => return Ok(vec![r_min]),
        1 => return Err(Error::Schedule(format!("a single level cannot span {r_min}..{r_max}"))),
        _ => {}
    }
    let growth = (((r_max as f64).ln() - (r_min as f64).ln()) / (levels - 1) as f64).exp();
    let mut out: Vec<usize> = (0..levels)
        .map(|i| (r_min as f64 * growth.powi(i as i32)).floor() as usize)
        .collect();
    // floor(r_min * g^(K-1)) can land one below r_max through rounding.
    out[0] = r_min;
    out[levels - 1] = r_max;
    Ok(out)
}
