//! Deterministic synthetic volumes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Volume3D, IDENTITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    Ellipsoids,
    SmoothBlobs,
    CheckerSmooth,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoids" => Ok(Self::Ellipsoids),
            "smooth-blobs" => Ok(Self::SmoothBlobs),
            "checker-smooth" => Ok(Self::CheckerSmooth),
            other => Err(Error::Config(format!("unknown phantom kind {other:?}"))),
        }
    }
}

/// An ellipsoid in the [-1, 1]³ phantom frame, rotated by `phi_deg` about z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub phi_deg: f64,
    pub intensity: f64,
}

const fn ell(center: [f64; 3], radii: [f64; 3], phi_deg: f64, intensity: f64) -> Ellipsoid {
    Ellipsoid {
        center,
        radii,
        phi_deg,
        intensity,
    }
}

/// Modified 3D Shepp-Logan head.
pub const SHEPP_LOGAN: [Ellipsoid; 10] = [
    ell([0.0, 0.0, 0.0], [0.69, 0.92, 0.81], 0.0, 1.0),
    ell([0.0, -0.0184, 0.0], [0.6624, 0.874, 0.78], 0.0, -0.8),
    ell([0.22, 0.0, 0.0], [0.11, 0.31, 0.22], -18.0, -0.2),
    ell([-0.22, 0.0, 0.0], [0.16, 0.41, 0.28], 18.0, -0.2),
    ell([0.0, 0.35, -0.15], [0.21, 0.25, 0.41], 0.0, 0.1),
    ell([0.0, 0.1, 0.25], [0.046, 0.046, 0.05], 0.0, 0.1),
    ell([0.0, -0.1, 0.25], [0.046, 0.046, 0.05], 0.0, 0.1),
    ell([-0.08, -0.605, 0.0], [0.046, 0.023, 0.05], 0.0, 0.1),
    ell([0.0, -0.606, 0.0], [0.023, 0.023, 0.02], 0.0, 0.1),
    ell([0.06, -0.605, 0.0], [0.023, 0.046, 0.02], 0.0, 0.1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 3],
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Edge length in voxels.
    pub size: usize,
    pub seed: u64,
    /// Sinusoid cycles per unit length along x, y, z (checker-smooth).
    pub frequencies: [f64; 3],
    /// Number of random bumps (smooth-blobs).
    pub blobs: usize,
    /// Explicit bumps; overrides `blobs` and `seed` when present.
    pub blob_list: Option<Vec<Blob>>,
    /// Ellipsoid set; defaults to the Shepp-Logan table.
    pub ellipsoids: Option<Vec<Ellipsoid>>,
    /// Width of the soft ellipsoid boundary, in units of the normalized radius.
    pub edge_width: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::SmoothBlobs,
            size: 32,
            seed: 0,
            frequencies: [2.0, 2.0, 2.0],
            blobs: 8,
            blob_list: None,
            ellipsoids: None,
            edge_width: 0.03,
        }
    }
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            seed,
            ..Self::default()
        }
    }

    pub fn checker(size: usize, frequencies: [f64; 3]) -> Self {
        Self {
            frequencies,
            ..Self::new(PhantomKind::CheckerSmooth, size, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("phantom size must be >= 8, got {}", self.size)));
        }
        if !(self.edge_width > 0.0) {
            return Err(Error::Config("edge_width must be positive".into()));
        }
        if self.frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::Config("frequencies must be finite".into()));
        }
        if let Some(list) = &self.ellipsoids {
            if list.iter().any(|e| e.radii.iter().any(|&r| !(r > 0.0))) {
                return Err(Error::Config("ellipsoid radii must be positive".into()));
            }
        }
        if let Some(list) = &self.blob_list {
            if list.iter().any(|b| !(b.width > 0.0) || !(0.0..=1.0).contains(&b.amplitude)) {
                return Err(Error::Config("blob widths must be positive and amplitudes in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    fn blob_set(&self) -> Vec<Blob> {
        if let Some(list) = &self.blob_list {
            return list.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.blobs)
            .map(|_| Blob {
                center: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)],
                width: rng.gen_range(0.06..0.15),
                amplitude: rng.gen_range(0.3..1.0),
            })
            .collect()
    }

    /// Closed-form intensity at a continuous normalized coordinate, for the
    /// checker-smooth kind.
    pub fn analytic(&self, x: [f64; 3]) -> Option<f64> {
        match self.kind {
            PhantomKind::CheckerSmooth => Some(checker(self.frequencies, x)),
            _ => None,
        }
    }
}

fn checker(f: [f64; 3], x: [f64; 3]) -> f64 {
    0.5 + 0.5 * (2.0 * PI * f[0] * x[0]).sin() * (2.0 * PI * f[1] * x[1]).sin() * (2.0 * PI * f[2] * x[2]).sin()
}

fn soft_ellipsoid(e: &Ellipsoid, u: [f64; 3], edge: f64) -> f64 {
    let (s, c) = e.phi_deg.to_radians().sin_cos();
    let d = [u[0] - e.center[0], u[1] - e.center[1], u[2] - e.center[2]];
    let local = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
    let r = ((local[0] / e.radii[0]).powi(2) + (local[1] / e.radii[1]).powi(2) + (local[2] / e.radii[2]).powi(2)).sqrt();
    1.0 / (1.0 + ((r - 1.0) / edge).exp())
}

/// Normalized coordinate of a voxel center: `(i + 0.5) / size`.
pub fn voxel_center(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / size as f64
}

pub fn generate(spec: &PhantomSpec) -> Result<Volume3D> {
    spec.validate()?;
    let n = spec.size;
    let dims = [n; 3];
    let at = |i, j, k| [voxel_center(i, n), voxel_center(j, n), voxel_center(k, n)];
    let volume = match spec.kind {
        PhantomKind::CheckerSmooth => Volume3D::from_fn(dims, IDENTITY, |i, j, k| checker(spec.frequencies, at(i, j, k)) as f32)?,
        PhantomKind::Ellipsoids => {
            let set = spec.ellipsoids.clone().unwrap_or_else(|| SHEPP_LOGAN.to_vec());
            Volume3D::from_fn(dims, IDENTITY, |i, j, k| {
                let x = at(i, j, k);
                let u = [2.0 * x[0] - 1.0, 2.0 * x[1] - 1.0, 2.0 * x[2] - 1.0];
                let v: f64 = set.iter().map(|e| e.intensity * soft_ellipsoid(e, u, spec.edge_width)).sum();
                v.clamp(0.0, 1.0) as f32
            })?
        }
        PhantomKind::SmoothBlobs => {
            let blobs = spec.blob_set();
            let raw: Vec<f64> = (0..n * n * n)
                .map(|idx| {
                    let x = at(idx % n, (idx / n) % n, idx / (n * n));
                    blobs
                        .iter()
                        .map(|b| {
                            let d2: f64 = (0..3).map(|a| (x[a] - b.center[a]).powi(2)).sum();
                            b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
                        })
                        .sum()
                })
                .collect();
            let peak = raw.iter().cloned().fold(1.0, f64::max);
            Volume3D::new(dims, raw.iter().map(|v| (v / peak) as f32).collect(), IDENTITY)?
        }
    };
    Ok(volume)
}
