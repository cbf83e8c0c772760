//! Reader and writer for a strict NIfTI-1 subset.
//!
//! Supported: single-file `.nii` / `.nii.gz`, little endian, 3D, dtypes
//! int16 (CT-HU), uint8 (binary), uint16 (labels), float32
//! (probabilities in [0, 1]), diagonal spacing only (no shear or
//! rotation), no intensity scaling. Everything else is rejected loudly
//! rather than reinterpreted.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use lnseg_core::{Kind, Samples, VoxelGrid};

use crate::{Result, ToolError};

const HEADER_LEN: usize = 348;
const DATA_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Read a volume; the grid kind follows the dtype: int16 is CT-HU,
/// float32 a probability map, uint8 a binary mask, uint16 a label map.
pub fn read_volume(path: &Path) -> Result<VoxelGrid> {
    let raw = fs::read(path).map_err(|e| ToolError::io(path, e))?;
    // Sniff the gzip magic so renamed files still load.
    let bytes = if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| ToolError::format(path, format!("gzip stream: {e}")))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes, path)
}

fn parse_nifti(bytes: &[u8], path: &Path) -> Result<VoxelGrid> {
    if bytes.len() < DATA_OFFSET {
        return Err(ToolError::format(
            path,
            format!("file holds {} bytes, shorter than a header", bytes.len()),
        ));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_LEN as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_LEN as i32 {
            return Err(ToolError::unsupported(path, "big-endian volume"));
        }
        return Err(ToolError::format(path, "not a NIfTI-1 header"));
    }
    let magic = &bytes[344..348];
    if magic == MAGIC_PAIR {
        return Err(ToolError::unsupported(path, "detached .hdr/.img pair"));
    }
    if magic != MAGIC_SINGLE {
        return Err(ToolError::format(path, "bad magic"));
    }

    let ndim = i16_at(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(ToolError::format(path, format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for axis in 0..ndim as usize {
        let d = i16_at(bytes, 42 + 2 * axis);
        if d < 1 {
            return Err(ToolError::format(path, format!("dim[{}] = {d}", axis + 1)));
        }
        if axis < 3 {
            dims[axis] = d as usize;
        } else if d != 1 {
            return Err(ToolError::unsupported(
                path,
                format!("{}D volume (dim[{}] = {d})", ndim, axis + 1),
            ));
        }
    }

    let datatype = i16_at(bytes, 70);
    let bitpix = i16_at(bytes, 72);
    let (value_size, expect_bitpix) = match datatype {
        DT_UINT8 => (1usize, 8i16),
        DT_INT16 => (2, 16),
        DT_FLOAT32 => (4, 32),
        DT_UINT16 => (2, 16),
        other => {
            return Err(ToolError::unsupported(
                path,
                format!("datatype {other}; supported: uint8, int16, uint16, float32"),
            ))
        }
    };
    if bitpix != expect_bitpix {
        return Err(ToolError::format(
            path,
            format!("bitpix {bitpix} does not match datatype {datatype}"),
        ));
    }

    let mut spacing = [0.0f64; 3];
    for axis in 0..3 {
        let s = f32_at(bytes, 76 + 4 * (axis + 1));
        if !s.is_finite() || s <= 0.0 {
            return Err(ToolError::format(
                path,
                format!("pixdim[{}] = {s}", axis + 1),
            ));
        }
        spacing[axis] = s as f64;
    }

    let scl_slope = f32_at(bytes, 112);
    let scl_inter = f32_at(bytes, 116);
    if !(scl_slope == 0.0 || scl_slope == 1.0) || scl_inter != 0.0 {
        return Err(ToolError::unsupported(
            path,
            format!("intensity scaling (slope {scl_slope}, inter {scl_inter})"),
        ));
    }

    let vox_offset = f32_at(bytes, 108);
    if vox_offset < HEADER_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(ToolError::format(path, format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let mut origin = [0.0f64; 3];
    let sform_code = i16_at(bytes, 254);
    let qform_code = i16_at(bytes, 252);
    if sform_code > 0 {
        for row in 0..3 {
            let base = 280 + 16 * row;
            for col in 0..3 {
                let v = f32_at(bytes, base + 4 * col);
                if row == col {
                    if (v.abs() as f64 - spacing[row]).abs() > 1e-3 {
                        return Err(ToolError::unsupported(
                            path,
                            format!("sform diagonal {v} disagrees with pixdim {}", spacing[row]),
                        ));
                    }
                } else if v != 0.0 {
                    return Err(ToolError::unsupported(
                        path,
                        "sform carries shear or rotation; only diagonal spacing is supported",
                    ));
                }
            }
            origin[row] = f32_at(bytes, base + 12) as f64;
        }
    } else if qform_code > 0 {
        for (i, off) in [256, 260, 264].into_iter().enumerate() {
            let q = f32_at(bytes, off);
            if q != 0.0 {
                return Err(ToolError::unsupported(
                    path,
                    format!("qform quaternion component {i} = {q}; rotations unsupported"),
                ));
            }
        }
        origin = [
            f32_at(bytes, 268) as f64,
            f32_at(bytes, 272) as f64,
            f32_at(bytes, 276) as f64,
        ];
    }

    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| ToolError::format(path, "dims overflow"))?;
    let need = n * value_size;
    let have = bytes.len().saturating_sub(vox_offset);
    if have != need {
        return Err(ToolError::format(
            path,
            format!("expected {need} data bytes, found {have}"),
        ));
    }
    let data = &bytes[vox_offset..vox_offset + need];

    let samples = match datatype {
        DT_UINT8 => {
            if let Some(bad) = data.iter().find(|&&v| v > 1) {
                return Err(ToolError::unsupported(
                    path,
                    format!("uint8 volume with value {bad}; binary masks must be 0/1"),
                ));
            }
            Samples::Binary(data.to_vec())
        }
        DT_INT16 => Samples::CtHu(
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        DT_UINT16 => Samples::Label(
            data.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        DT_FLOAT32 => {
            let vals: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(bad) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(ToolError::unsupported(
                    path,
                    format!("float volume with value {bad}; probability maps must lie in [0, 1]"),
                ));
            }
            Samples::Probability(vals)
        }
        _ => unreachable!(),
    };

    let grid = VoxelGrid::new(dims, spacing, samples)
        .map_err(|e| ToolError::format(path, e.to_string()))?;
    Ok(grid.with_origin(origin))
}

/// Write a volume; the dtype follows the grid kind. Files ending in
/// `.gz` are gzip-compressed.
pub fn write_volume(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let bytes = encode_nifti(grid)?;
    let mut file = fs::File::create(path).map_err(|e| ToolError::io(path, e))?;
    if is_gz(path) {
        let mut enc = GzEncoder::new(&mut file, Compression::default());
        enc.write_all(&bytes).map_err(|e| ToolError::io(path, e))?;
        enc.finish().map_err(|e| ToolError::io(path, e))?;
    } else {
        file.write_all(&bytes).map_err(|e| ToolError::io(path, e))?;
    }
    Ok(())
}

fn encode_nifti(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let dims = grid.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(ToolError::Invalid(format!(
            "dims {dims:?} exceed the NIfTI-1 16-bit dimension limit"
        )));
    }
    let (datatype, bitpix) = match grid.kind() {
        Kind::CtHu => (DT_INT16, 16i16),
        Kind::Probability => (DT_FLOAT32, 32),
        Kind::Binary => (DT_UINT8, 8),
        Kind::Label => (DT_UINT16, 16),
    };

    let n = grid.voxel_count();
    let value_size = (bitpix / 8) as usize;
    let mut out = vec![0u8; DATA_OFFSET + n * value_size];

    let put_i32 = |out: &mut [u8], off: usize, v: i32| out[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_i16 = |out: &mut [u8], off: usize, v: i16| out[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |out: &mut [u8], off: usize, v: f32| out[off..off + 4].copy_from_slice(&v.to_le_bytes());

    put_i32(&mut out, 0, HEADER_LEN as i32);
    out[38] = b'r'; // regular, as conventional
    put_i16(&mut out, 40, 3);
    for axis in 0..3 {
        put_i16(&mut out, 42 + 2 * axis, dims[axis] as i16);
    }
    for axis in 3..7 {
        put_i16(&mut out, 42 + 2 * axis, 1);
    }
    put_i16(&mut out, 70, datatype);
    put_i16(&mut out, 72, bitpix);
    put_f32(&mut out, 76, 1.0); // pixdim[0] (qfac)
    let spacing = grid.spacing();
    for axis in 0..3 {
        put_f32(&mut out, 76 + 4 * (axis + 1), spacing[axis] as f32);
    }
    put_f32(&mut out, 108, DATA_OFFSET as f32);
    put_f32(&mut out, 112, 1.0); // scl_slope
    put_f32(&mut out, 116, 0.0); // scl_inter
    out[123] = 2; // xyzt_units: mm
    let descrip = b"lnseg volume";
    out[148..148 + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut out, 252, 0); // qform_code
    put_i16(&mut out, 254, 1); // sform_code: scanner
    let origin = grid.origin();
    for row in 0..3 {
        let base = 280 + 16 * row;
        put_f32(&mut out, base + 4 * row, spacing[row] as f32);
        put_f32(&mut out, base + 12, origin[row] as f32);
    }
    out[344..348].copy_from_slice(MAGIC_SINGLE);
    // Bytes 348..352 stay zero: no header extensions.

    let data = &mut out[DATA_OFFSET..];
    match grid.values() {
        Samples::CtHu(v) => {
            for (chunk, val) in data.chunks_exact_mut(2).zip(v) {
                chunk.copy_from_slice(&val.to_le_bytes());
            }
        }
        Samples::Probability(v) => {
            for (chunk, val) in data.chunks_exact_mut(4).zip(v) {
                chunk.copy_from_slice(&val.to_le_bytes());
            }
        }
        Samples::Binary(v) => data.copy_from_slice(v),
        Samples::Label(v) => {
            for (chunk, val) in data.chunks_exact_mut(2).zip(v) {
                chunk.copy_from_slice(&val.to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_parse_round_trip_in_memory() {
        let grid = VoxelGrid::ct([3, 2, 2], [0.79, 0.79, 0.99], (0..12).map(|i| i as i16 - 6).collect())
            .unwrap()
            .with_origin([1.5, -2.0, 10.0]);
        let bytes = encode_nifti(&grid).unwrap();
        let back = parse_nifti(&bytes, Path::new("mem.nii")).unwrap();
        assert_eq!(back.dims(), grid.dims());
        assert_eq!(back.as_ct().unwrap(), grid.as_ct().unwrap());
        // Spacing survives as its f32 header representation.
        for axis in 0..3 {
            assert_eq!(back.spacing()[axis], grid.spacing()[axis] as f32 as f64);
        }
        assert_eq!(back.origin(), [1.5, -2.0, 10.0]);
    }

    #[test]
    fn rejects_unknown_dtype_and_scaling() {
        let grid = VoxelGrid::binary([2, 2, 2], [1.0; 3], vec![1; 8]).unwrap();
        let mut bytes = encode_nifti(&grid).unwrap();
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes()); // float64
        assert!(matches!(
            parse_nifti(&bytes, Path::new("m.nii")),
            Err(ToolError::Unsupported { .. })
        ));

        let mut scaled = encode_nifti(&grid).unwrap();
        scaled[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            parse_nifti(&scaled, Path::new("m.nii")),
            Err(ToolError::Unsupported { .. })
        ));
    }

    #[test]
    fn rejects_sheared_affine() {
        let grid = VoxelGrid::binary([2, 2, 2], [1.0; 3], vec![0; 8]).unwrap();
        let mut bytes = encode_nifti(&grid).unwrap();
        // srow_x[1] nonzero: shear.
        bytes[284..288].copy_from_slice(&0.3f32.to_le_bytes());
        assert!(matches!(
            parse_nifti(&bytes, Path::new("m.nii")),
            Err(ToolError::Unsupported { .. })
        ));
    }
}
