use crate::error::{Error, Result};

/// A numeric `.npy` array widened to `f64`, C order.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| format_err(format!("npy header lacks {key}")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

/// Parses version 1–3 `.npy` bytes holding little-endian or single-byte
/// integer, float or bool data.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(format_err("not an npy file (bad magic)"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(format_err("truncated npy header"));
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
                12,
            )
        }
        v => return Err(format_err(format!("unsupported npy version {v}"))),
    };
    let header_end = start + header_len;
    let header = bytes
        .get(start..header_end)
        .ok_or_else(|| format_err("truncated npy header"))?;
    let header = std::str::from_utf8(header).map_err(|_| format_err("npy header is not text"))?;

    let descr = header_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.split('\'').next())
        .ok_or_else(|| format_err("malformed npy descr"))?;
    if header_value(header, "fortran_order")?.starts_with("True") {
        return Err(format_err("fortran-ordered npy arrays are not supported"));
    }
    let shape_src = header_value(header, "shape")?;
    let shape_src = shape_src
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| format_err("malformed npy shape"))?;
    let shape = shape_src
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| format_err(format!("bad npy dimension {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let numel: usize = shape.iter().product();
    let body = &bytes[header_end..];
    let (width, decode): (usize, fn(&[u8]) -> f64) = match descr {
        "<f4" => (4, |b| f32::from_le_bytes(b.try_into().unwrap()) as f64),
        "<f8" => (8, |b| f64::from_le_bytes(b.try_into().unwrap())),
        "<i4" => (4, |b| i32::from_le_bytes(b.try_into().unwrap()) as f64),
        "<i8" => (8, |b| i64::from_le_bytes(b.try_into().unwrap()) as f64),
        "<u4" => (4, |b| u32::from_le_bytes(b.try_into().unwrap()) as f64),
        "<u8" => (8, |b| u64::from_le_bytes(b.try_into().unwrap()) as f64),
        "|u1" | "|b1" => (1, |b| b[0] as f64),
        "|i1" => (1, |b| b[0] as i8 as f64),
        other => return Err(format_err(format!("unsupported npy dtype {other}"))),
    };
    if body.len() < numel * width {
        return Err(format_err(format!(
            "npy body has {} bytes, shape {shape:?} needs {}",
            body.len(),
            numel * width
        )));
    }
    let data = body[..numel * width]
        .chunks_exact(width)
        .map(decode)
        .collect();
    Ok(NpyArray { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npy(descr: &str, shape: &str, body: &[u8]) -> Vec<u8> {
        let mut header =
            format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
        while (10 + header.len() + 1) % 64 != 0 {
            header.push(' ');
        }
        header.push('\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(body);
        out
    }

    #[test]
    fn reads_float_matrix_and_int_vector() {
        let body: Vec<u8> = [1.5f32, -2.0, 0.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let a = parse_npy(&npy("<f4", "(2, 2)", &body)).unwrap();
        assert_eq!(a.shape, vec![2, 2]);
        assert_eq!(a.data, vec![1.5, -2.0, 0.0, 4.0]);

        let body: Vec<u8> = [3i64, 7].iter().flat_map(|v| v.to_le_bytes()).collect();
        let a = parse_npy(&npy("<i8", "(2,)", &body)).unwrap();
        assert_eq!(a.shape, vec![2]);
        assert_eq!(a.data, vec![3.0, 7.0]);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let body = 1.0f64.to_le_bytes();
        let good = npy("<f8", "(2,)", &body);
        assert!(parse_npy(&good).is_err());
        assert!(parse_npy(b"NUMPY\x01\x00").is_err());
    }
}
