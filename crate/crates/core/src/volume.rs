//! Dense scalar volumes and the `vvol` on-disk format.
//!
//! A `vvol` file is a single UTF-8 JSON header line followed by the voxel
//! payload as little-endian `f32`, x varying fastest:
//!
//! ```text
//! {"dims":[H,W,D],"affine":[16 floats, row-major],"dtype":"f32","range":[lo,hi]}\n
//! <H*W*D little-endian f32>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel-index to scanner-space transform, row-major.
pub type Affine = [[f64; 4]; 4];

pub const IDENTITY: Affine = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

pub fn affine_mul(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

pub fn affine_apply(a: &Affine, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3];
    }
    out
}

fn det3(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Affine taking output voxel indices of a grid resampled by per-axis scale
/// `s` (output index `j` sits at input index `s*j + offset`) back to the
/// scanner space of `a`.
/// Affine of the `k`-times finer grid whose `k`³ blocks average back onto
/// the voxels of a grid with affine `a`.
pub fn upsampled_affine(a: &Affine, k: usize) -> Affine {
    let k = k as f64;
    resampled_affine(a, 1.0 / k, 0.5 / k - 0.5)
}

pub(crate) fn resampled_affine(a: &Affine, scale: f64, offset: f64) -> Affine {
    let m = [
        [scale, 0.0, 0.0, offset],
        [0.0, scale, 0.0, offset],
        [0.0, 0.0, scale, offset],
        [0.0, 0.0, 0.0, 1.0],
    ];
    affine_mul(a, &m)
}

/// A scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    data: Vec<f32>,
    affine: Affine,
    /// Raw intensity represented by normalized 0 and 1: `raw = lo + v * (hi - lo)`.
    intensity_range: (f64, f64),
}

impl Volume3D {
    pub fn new(dims: [usize; 3], data: Vec<f32>, affine: Affine) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match dims {dims:?} ({n})",
                data.len()
            )));
        }
        if det3(&affine).abs() < 1e-12 {
            return Err(Error::Degenerate("affine 3x3 block is singular".into()));
        }
        Ok(Self {
            dims,
            data,
            affine,
            intensity_range: (0.0, 1.0),
        })
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()], IDENTITY)
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(dims: [usize; 3], affine: Affine, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data, affine)
    }

    pub fn with_intensity_range(mut self, range: (f64, f64)) -> Self {
        self.intensity_range = range;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn intensity_range(&self) -> (f64, f64) {
        self.intensity_range
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Copies the sub-block starting at the origin with the given dims; the
    /// affine is unchanged since voxel indices are preserved.
    pub fn crop(&self, dims: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| dims[a] == 0 || dims[a] > self.dims[a]) {
            return Err(Error::Dimension(format!("cannot crop {:?} to {dims:?}", self.dims)));
        }
        let out = Self::from_fn(dims, self.affine, |i, j, k| self.get(i, j, k))?;
        Ok(out.with_intensity_range(self.intensity_range))
    }

    /// Maps a normalized value back to raw intensity units.
    pub fn denormalize_value(&self, v: f64) -> f64 {
        let (lo, hi) = self.intensity_range;
        lo + v * (hi - lo)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VvolHeader {
    dims: [usize; 3],
    affine: Vec<f64>,
    dtype: String,
    range: [f64; 2],
}

pub fn save_vvol(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &encode_vvol(v)?)
}

pub fn load_vvol(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vvol(&bytes)
}

pub fn encode_vvol(v: &Volume3D) -> Result<Vec<u8>> {
    let header = VvolHeader {
        dims: v.dims,
        affine: v.affine.iter().flatten().copied().collect(),
        dtype: "f32".into(),
        range: [v.intensity_range.0, v.intensity_range.1],
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    let start = out.len();
    out.resize(start + 4 * v.data.len(), 0);
    LittleEndian::write_f32_into(&v.data, &mut out[start..]);
    Ok(out)
}

pub fn decode_vvol(bytes: &[u8]) -> Result<Volume3D> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header terminator".into()))?;
    let header: VvolHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.affine.len() != 16 {
        return Err(Error::Format(format!("affine must have 16 entries, got {}", header.affine.len())));
    }
    let n: usize = header.dims.iter().product();
    let payload = &bytes[newline + 1..];
    if payload.len() != 4 * n {
        return Err(Error::Truncated {
            expected: 4 * n,
            found: payload.len(),
        });
    }
    let mut data = vec![0.0f32; n];
    LittleEndian::read_f32_into(payload, &mut data);
    let mut affine = [[0.0; 4]; 4];
    for (r, row) in affine.iter_mut().enumerate() {
        row.copy_from_slice(&header.affine[4 * r..4 * r + 4]);
    }
    let v = Volume3D::new(header.dims, data, affine).map_err(|e| Error::Format(e.to_string()))?;
    Ok(v.with_intensity_range((header.range[0], header.range[1])))
}

/// Min-max rescales intensities into [0, 1] and folds the mapping into the
/// recorded intensity range.
pub fn normalize(v: &Volume3D) -> Result<Volume3D> {
    let (lo, hi) = v.min_max();
    if !(hi > lo) {
        return Err(Error::Degenerate(format!("constant volume (value {lo})")));
    }
    let (lo, hi) = (lo as f64, hi as f64);
    let span = hi - lo;
    let data = v
        .data
        .iter()
        .map(|&x| (((x as f64 - lo) / span) as f32).clamp(0.0, 1.0))
        .collect();
    let range = (v.denormalize_value(lo), v.denormalize_value(hi));
    Ok(Volume3D {
        dims: v.dims,
        data,
        affine: v.affine,
        intensity_range: range,
    })
}

/// Block-mean downsampling by an integer factor per axis. Output voxel
/// centers map to the scanner-space centers of their source blocks.
pub fn downsample(v: &Volume3D, k: usize) -> Result<Volume3D> {
    if k == 0 {
        return Err(Error::Dimension("downsample factor must be positive".into()));
    }
    if v.dims.iter().any(|&d| d < k) {
        return Err(Error::Dimension(format!("factor {k} exceeds a dimension of {:?}", v.dims)));
    }
    let out_dims = [v.dims[0] / k, v.dims[1] / k, v.dims[2] / k];
    let norm = 1.0 / (k * k * k) as f64;
    let affine = resampled_affine(&v.affine, k as f64, (k as f64 - 1.0) / 2.0);
    let out = Volume3D::from_fn(out_dims, affine, |i, j, l| {
        let mut acc = 0.0f64;
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    acc += v.get(k * i + dx, k * j + dy, k * l + dz) as f64;
                }
            }
        }
        (acc * norm) as f32
    })?;
    Ok(out.with_intensity_range(v.intensity_range))
}

/// Per-axis factor for a volumetric up-sampling scale: `round(sigma^(1/3))`.
pub fn factor_for_scale(sigma: f64) -> usize {
    sigma.cbrt().round().max(0.0) as usize
}

/// Writes `bytes` atomically enough for CLI use: parent directories are created first.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], data: Vec<f32>) -> Volume3D {
        Volume3D::new(dims, data, IDENTITY).unwrap()
    }

    #[test]
    fn zero_file_loads() {
        let v = Volume3D::filled([4, 4, 4], 0.0).unwrap();
        let back = decode_vvol(&encode_vvol(&v).unwrap()).unwrap();
        assert_eq!(back.len(), 64);
        assert!(back.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn short_payload_is_truncation() {
        let v = Volume3D::filled([4, 4, 4], 1.0).unwrap();
        let mut bytes = encode_vvol(&v).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_vvol(&bytes),
            Err(Error::Truncated { expected: 256, found: 252 })
        ));
    }

    #[test]
    fn garbage_header_is_format_error() {
        assert!(matches!(decode_vvol(b"{not json\n"), Err(Error::Format(_))));
        assert!(matches!(decode_vvol(b"no newline"), Err(Error::Format(_))));
    }

    #[test]
    fn normalize_examples() {
        let v = vol([3, 1, 1], vec![2.0, 4.0, 6.0]);
        let n = normalize(&v).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(n.intensity_range(), (2.0, 6.0));

        let v = vol([2, 1, 1], vec![0.0, 1.0]);
        let n = normalize(&v).unwrap();
        assert_eq!(n.data(), &[0.0, 1.0]);
        assert_eq!(n.intensity_range(), (0.0, 1.0));

        let z = Volume3D::filled([2, 2, 2], 0.0).unwrap();
        assert!(matches!(normalize(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn downsample_shapes_and_means() {
        let v = Volume3D::filled([64, 64, 64], 0.25).unwrap();
        let d = downsample(&v, 2).unwrap();
        assert_eq!(d.dims(), [32, 32, 32]);
        assert!(d.data().iter().all(|&x| x == 0.25));

        let mut hr = Volume3D::filled([4, 4, 4], 0.0).unwrap();
        let idx = hr.index(3, 2, 3);
        hr.data[idx] = 8.0;
        let d = downsample(&hr, 2).unwrap();
        assert_eq!(d.get(1, 1, 1), 1.0);
        assert_eq!(d.data().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn downsample_affine_hits_block_centers() {
        let v = Volume3D::filled([6, 6, 6], 0.0).unwrap();
        let d = downsample(&v, 3).unwrap();
        assert_eq!(affine_apply(d.affine(), [0.0, 0.0, 0.0]), [1.0, 1.0, 1.0]);
        assert_eq!(affine_apply(d.affine(), [1.0, 0.0, 1.0]), [4.0, 1.0, 4.0]);
    }

    #[test]
    fn downsample_rejects_large_factor() {
        let v = Volume3D::filled([4, 8, 8], 0.0).unwrap();
        assert!(matches!(downsample(&v, 5), Err(Error::Dimension(_))));
        assert!(matches!(downsample(&v, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn singular_affine_rejected() {
        let mut a = IDENTITY;
        a[2][2] = 0.0;
        assert!(Volume3D::new([1, 1, 1], vec![0.0], a).is_err());
    }

    #[test]
    fn scale_to_factor() {
        assert_eq!(factor_for_scale(8.0), 2);
        assert_eq!(factor_for_scale(27.0), 3);
        assert_eq!(factor_for_scale(4.0), 2);
    }
}
