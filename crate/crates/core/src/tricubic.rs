//! Separable Catmull-Rom up-sampling, the interpolation baseline.

use crate::error::{Error, Result};
use crate::volume::{upsampled_affine, Volume3D};

/// Catmull-Rom taps for fractional offset `t` in [0, 1), applied to samples
/// at offsets -1, 0, 1, 2.
#[inline]
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Resamples one axis from `n_in` to `n_in * k` samples. Output sample `j`
/// sits at input coordinate `(j + 0.5) / k - 0.5`, which matches the
/// block-center geometry of block-mean downsampling.
fn upsample_axis(src: &[f64], dims: [usize; 3], axis: usize, k: usize) -> (Vec<f64>, [usize; 3]) {
    let n_in = dims[axis];
    let n_out = n_in * k;
    let mut out_dims = dims;
    out_dims[axis] = n_out;

    let taps: Vec<(isize, [f64; 4])> = (0..n_out)
        .map(|j| {
            let x = (j as f64 + 0.5) / k as f64 - 0.5;
            let base = x.floor();
            (base as isize, catmull_rom_weights(x - base))
        })
        .collect();

    let in_stride = [1, dims[0], dims[0] * dims[1]];
    let out_stride = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let mut out = vec![0.0; out_dims.iter().product()];
    let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
    for (o, val) in out.iter_mut().enumerate() {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = (o / out_stride[a]) % out_dims[a];
        }
        let (base, w) = taps[idx[axis]];
        let mut src_base = 0;
        for a in 0..3 {
            if a != axis {
                src_base += idx[a] * in_stride[a];
            }
        }
        let s = in_stride[axis];
        let mut acc = 0.0;
        for (t, wt) in w.iter().enumerate() {
            acc += wt * src[src_base + clamp(base - 1 + t as isize) * s];
        }
        *val = acc;
    }
    (out, out_dims)
}

pub fn tricubic_upsample(lr: &Volume3D, k: usize) -> Result<Volume3D> {
    if k == 0 {
        return Err(Error::Contract("up-sampling factor must be positive".into()));
    }
    if lr.dims().iter().any(|&d| d < 4) {
        return Err(Error::Contract(format!("tricubic needs every dim >= 4, got {:?}", lr.dims())));
    }
    let mut data: Vec<f64> = lr.data().iter().map(|&v| v as f64).collect();
    let mut dims = lr.dims();
    for axis in 0..3 {
        let (d, nd) = upsample_axis(&data, dims, axis, k);
        data = d;
        dims = nd;
    }
    let affine = upsampled_affine(lr.affine(), k);
    let out = Volume3D::new(dims, data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(), affine)?;
    Ok(out.with_intensity_range(lr.intensity_range()))
}
