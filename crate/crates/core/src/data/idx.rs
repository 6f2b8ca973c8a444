//! IDX container format: big-endian header `00 00 <type> <ndim>`, `ndim`
//! 32-bit extents, then the payload in row-major order.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxType {
    pub fn code(self) -> u8 {
        match self {
            IdxType::U8 => 0x08,
            IdxType::I8 => 0x09,
            IdxType::I16 => 0x0B,
            IdxType::I32 => 0x0C,
            IdxType::F32 => 0x0D,
            IdxType::F64 => 0x0E,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x08 => IdxType::U8,
            0x09 => IdxType::I8,
            0x0B => IdxType::I16,
            0x0C => IdxType::I32,
            0x0D => IdxType::F32,
            0x0E => IdxType::F64,
            _ => return None,
        })
    }

    pub fn width(self) -> usize {
        match self {
            IdxType::U8 | IdxType::I8 => 1,
            IdxType::I16 => 2,
            IdxType::I32 | IdxType::F32 => 4,
            IdxType::F64 => 8,
        }
    }
}

/// Decoded IDX array. Every supported element type is exactly representable
/// as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dtype: IdxType,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl IdxArray {
    pub fn new(dtype: IdxType, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() || dims.is_empty() {
            return Err(Error::shape(
                "idx",
                format!("dims {dims:?} need {n} values, got {}", values.len()),
            ));
        }
        Ok(Self {
            dtype,
            dims,
            values,
        })
    }
}

fn take<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::Parse {
        offset,
        msg: format!(
            "truncated {what}: expected {len} bytes, found {}",
            bytes.len().saturating_sub(offset)
        ),
    })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = take(bytes, 0, 4, "magic number")?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::Parse {
            offset: 0,
            msg: format!(
                "bad magic {:02x} {:02x}, expected 00 00",
                magic[0], magic[1]
            ),
        });
    }
    let dtype = IdxType::from_code(magic[2]).ok_or_else(|| Error::Parse {
        offset: 2,
        msg: format!("unsupported element type 0x{:02x}", magic[2]),
    })?;
    let ndim = magic[3] as usize;
    if ndim == 0 {
        return Err(Error::Parse {
            offset: 3,
            msg: "zero dimensions".into(),
        });
    }
    let header = take(bytes, 4, 4 * ndim, "dimension list")?;
    let dims: Vec<usize> = header
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let start = 4 + 4 * ndim;
    let count: usize = dims.iter().product();
    let expected = count * dtype.width();
    let available = bytes.len() - start;
    if available < expected {
        return Err(Error::Parse {
            offset: start,
            msg: format!("truncated payload: expected {expected} bytes, found {available}"),
        });
    }
    if available > expected {
        return Err(Error::Parse {
            offset: start + expected,
            msg: format!("{} trailing bytes after payload", available - expected),
        });
    }
    let payload = &bytes[start..];
    let w = dtype.width();
    let values = payload
        .chunks_exact(w)
        .map(|c| match dtype {
            IdxType::U8 => c[0] as f64,
            IdxType::I8 => c[0] as i8 as f64,
            IdxType::I16 => i16::from_be_bytes([c[0], c[1]]) as f64,
            IdxType::I32 => i32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            IdxType::F32 => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            IdxType::F64 => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok(IdxArray {
        dtype,
        dims,
        values,
    })
}

/// Encodes an array; values are converted with `as` casts to the element type.
pub fn serialize_idx(a: &IdxArray) -> Result<Vec<u8>> {
    if a.dims.len() > 255 {
        return Err(Error::shape("idx", "more than 255 dimensions"));
    }
    let mut out = vec![0, 0, a.dtype.code(), a.dims.len() as u8];
    for &d in &a.dims {
        let d =
            u32::try_from(d).map_err(|_| Error::shape("idx", format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.reserve(a.values.len() * a.dtype.width());
    for &v in &a.values {
        match a.dtype {
            IdxType::U8 => out.push(v as u8),
            IdxType::I8 => out.push(v as i8 as u8),
            IdxType::I16 => out.extend_from_slice(&(v as i16).to_be_bytes()),
            IdxType::I32 => out.extend_from_slice(&(v as i32).to_be_bytes()),
            IdxType::F32 => out.extend_from_slice(&(v as f32).to_be_bytes()),
            IdxType::F64 => out.extend_from_slice(&v.to_be_bytes()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_header() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..1568).map(|i| (i % 256) as u8));
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 28, 28]);
        assert_eq!(a.values[300], 44.0);
    }

    #[test]
    fn label_vector() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1, 4, 1, 5];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.values, vec![3.0, 1.0, 4.0, 1.0, 5.0]);
    }

    #[test]
    fn truncation_names_counts() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1, 4];
        let msg = parse_idx(&bytes).unwrap_err().to_string();
        assert!(msg.contains("expected 5 bytes, found 3"), "{msg}");
        assert!(msg.contains("byte 8"), "{msg}");
    }

    #[test]
    fn bad_magic_and_type() {
        assert!(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 0])
            .unwrap_err()
            .to_string()
            .contains("byte 0"));
        assert!(parse_idx(&[0, 0, 7, 1, 0, 0, 0, 0])
            .unwrap_err()
            .to_string()
            .contains("0x07"));
        assert!(parse_idx(&[0, 0]).is_err());
    }

    #[test]
    fn round_trip_all_types() {
        for dtype in [
            IdxType::U8,
            IdxType::I8,
            IdxType::I16,
            IdxType::I32,
            IdxType::F32,
            IdxType::F64,
        ] {
            let a = IdxArray::new(dtype, vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
            let bytes = serialize_idx(&a).unwrap();
            assert_eq!(parse_idx(&bytes).unwrap(), a);
            assert_eq!(serialize_idx(&parse_idx(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}
