//! Minimal NIfTI-1 single-file (`n+1`) reader.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volume::{Affine, Volume3D};

pub const HEADER_SIZE: usize = 348;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

pub fn import_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes)
}

pub fn decode_nifti(bytes: &[u8]) -> Result<Volume3D> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!("file too short for a NIfTI-1 header ({} bytes)", bytes.len())));
    }
    if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<BigEndian>(bytes)
    } else {
        Err(Error::Format("sizeof_hdr is not 348".into()))
    }
}

fn decode_with<E: ByteOrder>(b: &[u8]) -> Result<Volume3D> {
    if &b[offsets::MAGIC..offsets::MAGIC + 4] != b"n+1\0" {
        return Err(Error::Format("magic is not \"n+1\"".into()));
    }
    let dim: Vec<i16> = (0..8).map(|i| E::read_i16(&b[offsets::DIM + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let extent = |i: usize| if (i as i16) <= ndim { dim[i].max(1) as usize } else { 1 };
    if (4..=7).any(|i| extent(i) != 1) {
        return Err(Error::Unsupported("only single-timepoint 3D volumes are supported".into()));
    }
    let dims = [extent(1), extent(2), extent(3)];
    if (1..=3).any(|i| (i as i16) <= ndim && dim[i] <= 0) {
        return Err(Error::Format(format!("non-positive dimension in {:?}", &dim[1..4])));
    }

    let datatype = E::read_i16(&b[offsets::DATATYPE..]);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
    };
    let bitpix = E::read_i16(&b[offsets::BITPIX..]);
    if bitpix != 8 * width as i16 {
        return Err(Error::Format(format!("bitpix {bitpix} inconsistent with datatype {datatype}")));
    }

    let vox_offset = E::read_f32(&b[offsets::VOX_OFFSET..]);
    let start = (vox_offset.max(HEADER_SIZE as f32)) as usize;
    let n = dims[0] * dims[1] * dims[2];
    let need = start + n * width;
    if b.len() < need {
        return Err(Error::Truncated {
            expected: need,
            found: b.len(),
        });
    }
    let raw = &b[start..need];
    let mut data: Vec<f32> = match datatype {
        DT_UINT8 => raw.iter().map(|&v| v as f32).collect(),
        DT_INT16 => raw.chunks_exact(2).map(|c| E::read_i16(c) as f32).collect(),
        _ => raw.chunks_exact(4).map(E::read_f32).collect(),
    };

    let slope = E::read_f32(&b[offsets::SCL_SLOPE..]);
    let inter = E::read_f32(&b[offsets::SCL_INTER..]);
    if slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }

    let pixdim: Vec<f64> = (0..8).map(|i| E::read_f32(&b[offsets::PIXDIM + 4 * i..]) as f64).collect();
    let affine = header_affine::<E>(b, &pixdim);
    Volume3D::new(dims, data, affine)
}

fn header_affine<E: ByteOrder>(b: &[u8], pixdim: &[f64]) -> Affine {
    let f = |off: usize| E::read_f32(&b[off..]) as f64;
    let sform_code = E::read_i16(&b[offsets::SFORM_CODE..]);
    let qform_code = E::read_i16(&b[offsets::QFORM_CODE..]);
    let spacing = |i: usize| if pixdim[i] > 0.0 { pixdim[i] } else { 1.0 };

    if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = f(offsets::SROW_X + 16 * r + 4 * c);
            }
        }
        a[3][3] = 1.0;
        return a;
    }

    if qform_code > 0 {
        let (qb, qc, qd) = (
            f(offsets::QUATERN_B),
            f(offsets::QUATERN_B + 4),
            f(offsets::QUATERN_B + 8),
        );
        let qa = (1.0 - (qb * qb + qc * qc + qd * qd)).max(0.0).sqrt();
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let rot = [
            [qa * qa + qb * qb - qc * qc - qd * qd, 2.0 * (qb * qc - qa * qd), 2.0 * (qb * qd + qa * qc)],
            [2.0 * (qb * qc + qa * qd), qa * qa + qc * qc - qb * qb - qd * qd, 2.0 * (qc * qd - qa * qb)],
            [2.0 * (qb * qd - qa * qc), 2.0 * (qc * qd + qa * qb), qa * qa + qd * qd - qc * qc - qb * qb],
        ];
        let scale = [spacing(1), spacing(2), spacing(3) * qfac];
        let mut a = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = rot[r][c] * scale[c];
            }
            a[r][3] = f(offsets::QOFFSET_X + 4 * r);
        }
        a[3][3] = 1.0;
        return a;
    }

    let mut a = [[0.0; 4]; 4];
    for i in 0..3 {
        a[i][i] = spacing(i + 1);
    }
    a[3][3] = 1.0;
    a
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Builds a little-endian single-file NIfTI-1 image for tests.
    pub struct NiftiBuilder {
        pub dims: [i16; 3],
        pub datatype: i16,
        pub payload: Vec<u8>,
        pub sform: Option<[[f32; 4]; 3]>,
        pub qform: Option<([f32; 3], [f32; 3])>,
        pub pixdim: [f32; 3],
        pub magic: [u8; 4],
    }

    impl NiftiBuilder {
        pub fn new(dims: [i16; 3], datatype: i16, payload: Vec<u8>) -> Self {
            Self {
                dims,
                datatype,
                payload,
                sform: None,
                qform: None,
                pixdim: [1.0; 3],
                magic: *b"n+1\0",
            }
        }

        pub fn build(&self) -> Vec<u8> {
            let mut h = vec![0u8; 352];
            LittleEndian::write_i32(&mut h[offsets::SIZEOF_HDR..], 348);
            LittleEndian::write_i16(&mut h[offsets::DIM..], 3);
            for i in 0..3 {
                LittleEndian::write_i16(&mut h[offsets::DIM + 2 * (i + 1)..], self.dims[i]);
            }
            for i in 4..8 {
                LittleEndian::write_i16(&mut h[offsets::DIM + 2 * i..], 1);
            }
            LittleEndian::write_i16(&mut h[offsets::DATATYPE..], self.datatype);
            let bitpix = match self.datatype {
                DT_UINT8 => 8,
                DT_INT16 => 16,
                DT_FLOAT32 => 32,
                _ => 64,
            };
            LittleEndian::write_i16(&mut h[offsets::BITPIX..], bitpix);
            LittleEndian::write_f32(&mut h[offsets::PIXDIM..], 1.0);
            for i in 0..3 {
                LittleEndian::write_f32(&mut h[offsets::PIXDIM + 4 * (i + 1)..], self.pixdim[i]);
            }
            LittleEndian::write_f32(&mut h[offsets::VOX_OFFSET..], 352.0);
            if let Some(rows) = self.sform {
                LittleEndian::write_i16(&mut h[offsets::SFORM_CODE..], 1);
                for (r, row) in rows.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        LittleEndian::write_f32(&mut h[offsets::SROW_X + 16 * r + 4 * c..], *v);
                    }
                }
            }
            if let Some((quat, offset)) = self.qform {
                LittleEndian::write_i16(&mut h[offsets::QFORM_CODE..], 1);
                for i in 0..3 {
                    LittleEndian::write_f32(&mut h[offsets::QUATERN_B + 4 * i..], quat[i]);
                    LittleEndian::write_f32(&mut h[offsets::QOFFSET_X + 4 * i..], offset[i]);
                }
            }
            h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(&self.magic);
            h.extend_from_slice(&self.payload);
            h
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::NiftiBuilder;
    use super::*;
    use crate::volume::IDENTITY;

    fn int16_payload(values: &[i16]) -> Vec<u8> {
        let mut out = vec![0u8; 2 * values.len()];
        LittleEndian::write_i16_into(values, &mut out);
        out
    }

    #[test]
    fn sform_identity() {
        let mut nb = NiftiBuilder::new([2, 2, 2], DT_UINT8, vec![0; 8]);
        nb.sform = Some([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        nb.pixdim = [3.0, 3.0, 3.0];
        let v = decode_nifti(&nb.build()).unwrap();
        assert_eq!(*v.affine(), IDENTITY);
    }

    #[test]
    fn int16_widens() {
        let nb = NiftiBuilder::new([2, 1, 1], DT_INT16, int16_payload(&[0, 100]));
        let v = decode_nifti(&nb.build()).unwrap();
        assert_eq!(v.data(), &[0.0, 100.0]);
    }

    #[test]
    fn complex_is_unsupported() {
        let nb = NiftiBuilder::new([1, 1, 1], 32, vec![0; 8]);
        assert!(matches!(decode_nifti(&nb.build()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bad_magic() {
        let mut nb = NiftiBuilder::new([1, 1, 1], DT_UINT8, vec![0]);
        nb.magic = *b"ni1\0";
        assert!(matches!(decode_nifti(&nb.build()), Err(Error::Format(_))));
    }

    #[test]
    fn pixdim_fallback_and_float_payload() {
        let mut payload = vec![0u8; 16];
        LittleEndian::write_f32_into(&[0.5, 1.5, 2.5, 3.5], &mut payload);
        let mut nb = NiftiBuilder::new([4, 1, 1], DT_FLOAT32, payload);
        nb.pixdim = [2.0, 3.0, 4.0];
        let v = decode_nifti(&nb.build()).unwrap();
        assert_eq!(v.data(), &[0.5, 1.5, 2.5, 3.5]);
        assert_eq!(v.affine()[0][0], 2.0);
        assert_eq!(v.affine()[1][1], 3.0);
        assert_eq!(v.affine()[2][2], 4.0);
    }

    #[test]
    fn qform_identity_rotation_with_offset() {
        let mut nb = NiftiBuilder::new([1, 1, 1], DT_UINT8, vec![7]);
        nb.qform = Some(([0.0, 0.0, 0.0], [5.0, -2.0, 1.0]));
        nb.pixdim = [2.0, 2.0, 2.0];
        let v = decode_nifti(&nb.build()).unwrap();
        assert_eq!(v.affine()[0], [2.0, 0.0, 0.0, 5.0]);
        assert_eq!(v.affine()[1], [0.0, 2.0, 0.0, -2.0]);
        assert_eq!(v.affine()[2], [0.0, 0.0, 2.0, 1.0]);
    }

    #[test]
    fn truncated_payload() {
        let nb = NiftiBuilder::new([2, 2, 2], DT_INT16, vec![0; 10]);
        assert!(matches!(decode_nifti(&nb.build()), Err(Error::Truncated { .. })));
    }
}
