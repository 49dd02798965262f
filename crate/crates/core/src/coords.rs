//! Training (LR) and query (HR) coordinate sets in a shared normalized frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{affine_apply, Volume3D};

/// Axis-aligned scanner-space box used to map coordinates into [0, 1]³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Bounds {
    pub fn extent(&self) -> [f64; 3] {
        [self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2]]
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.hi[axis] > self.lo[axis]) {
                return Err(Error::DegenerateBounds {
                    axis,
                    value: self.lo[axis],
                });
            }
        }
        Ok(())
    }

    /// Maps a scanner-space point into normalized space, clamping to the
    /// unit cube. The flag reports whether any component was clamped by more
    /// than rounding noise.
    #[inline]
    pub fn normalize(&self, p: [f64; 3]) -> ([f64; 3], bool) {
        let mut out = [0.0; 3];
        let mut clamped = false;
        for a in 0..3 {
            let u = (p[a] - self.lo[a]) / (self.hi[a] - self.lo[a]);
            let c = u.clamp(0.0, 1.0);
            clamped |= (c - u).abs() > 1e-9;
            out[a] = c;
        }
        (out, clamped)
    }

    pub fn denormalize(&self, u: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.lo[a] + u[a] * (self.hi[a] - self.lo[a]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CoordSet {
    pub points: Vec<[f64; 3]>,
    pub source_dims: [usize; 3],
    pub bounds: Bounds,
    /// Number of points that had at least one component clamped.
    pub clamped: usize,
}

impl CoordSet {
    pub fn clamped_fraction(&self) -> f64 {
        if self.points.is_empty() {
            0.0
        } else {
            self.clamped as f64 / self.points.len() as f64
        }
    }
}

/// Scanner-space centers of every voxel, in data (x-fastest) order.
pub fn voxel_coords(v: &Volume3D) -> Vec<[f64; 3]> {
    let [h, w, d] = v.dims();
    let a = v.affine();
    let mut out = Vec::with_capacity(v.len());
    for k in 0..d {
        for j in 0..w {
            for i in 0..h {
                out.push(affine_apply(a, [i as f64, j as f64, k as f64]));
            }
        }
    }
    out
}

pub fn normalize_coords(points: &[[f64; 3]], bounds: Bounds, source_dims: [usize; 3]) -> Result<CoordSet> {
    bounds.validate()?;
    let mut clamped = 0;
    let points = points
        .iter()
        .map(|&p| {
            let (u, c) = bounds.normalize(p);
            clamped += c as usize;
            u
        })
        .collect();
    Ok(CoordSet {
        points,
        source_dims,
        bounds,
        clamped,
    })
}

/// Bounding box of the voxel centers, padded by `margin` times the extent on
/// each side.
pub fn shared_bounds(v: &Volume3D, margin: f64) -> Bounds {
    let [h, w, d] = v.dims();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    // Extremes of an affine image of a box are attained at its corners.
    for &k in &[0, d - 1] {
        for &j in &[0, w - 1] {
            for &i in &[0, h - 1] {
                let p = affine_apply(v.affine(), [i as f64, j as f64, k as f64]);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
    }
    for a in 0..3 {
        let pad = margin * (hi[a] - lo[a]);
        lo[a] -= pad;
        hi[a] += pad;
    }
    Bounds { lo, hi }
}

/// Margin fraction equivalent to padding every axis by `voxels` LR voxel
/// spacings (the largest fraction over the axes).
pub fn margin_for_voxels(lr_dims: [usize; 3], voxels: f64) -> f64 {
    lr_dims
        .iter()
        .filter(|&&n| n > 1)
        .map(|&n| voxels / (n - 1) as f64)
        .fold(0.0, f64::max)
}

/// Default margin: half an LR voxel, which covers block-aligned HR grids for
/// every integer factor.
pub fn default_margin(lr_dims: [usize; 3]) -> f64 {
    margin_for_voxels(lr_dims, 0.5)
}

/// Tightest margin keeping the outermost HR voxel centers of a `k`-times
/// block-aligned grid inside the box: `(k - 1) / 2` HR spacings.
pub fn margin_for_factor(lr_dims: [usize; 3], k: usize) -> f64 {
    let k = k.max(1) as f64;
    margin_for_voxels(lr_dims, (k - 1.0) / (2.0 * k))
}
