//! Tensor record files: the portable container every feature tensor is
//! stored in.
//!
//! Layout: magic `TSRF`, little-endian u32 header length, UTF-8 JSON header
//! `{"dtype":"f32","shape":[...],"order":"row-major"}`, then the raw
//! little-endian f32 payload. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tstnet_core::Tensor;

pub const MAGIC: [u8; 4] = *b"TSRF";

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a tensor record")]
    BadMagic,
    #[error("truncated header: {0}")]
    TruncatedHeader(String),
    #[error("header parse failure: {0}")]
    HeaderParse(String),
    #[error("unsupported dtype {0:?} (only \"f32\")")]
    UnsupportedDtype(String),
    #[error("unsupported order {0:?} (only \"row-major\")")]
    UnsupportedOrder(String),
    #[error("payload holds {got} bytes but shape {shape:?} requires {expected}")]
    PayloadSizeMismatch { expected: usize, got: usize, shape: Vec<usize> },
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

pub fn encode_tensor(tensor: &Tensor<f32>) -> Vec<u8> {
    let header = Header {
        dtype: "f32".into(),
        shape: tensor.shape().to_vec(),
        order: "row-major".into(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header_bytes.len() + tensor.numel() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for x in tensor.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>, RecordError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(RecordError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(RecordError::TruncatedHeader("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let Some(header_bytes) = bytes.get(8..8 + header_len) else {
        return Err(RecordError::TruncatedHeader(format!(
            "header claims {header_len} bytes, file has {}",
            bytes.len() - 8
        )));
    };
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| RecordError::HeaderParse(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(RecordError::UnsupportedDtype(header.dtype));
    }
    if header.order != "row-major" {
        return Err(RecordError::UnsupportedOrder(header.order));
    }
    let payload = &bytes[8 + header_len..];
    let expected: usize = header.shape.iter().product::<usize>() * 4;
    if payload.len() != expected {
        return Err(RecordError::PayloadSizeMismatch {
            expected,
            got: payload.len(),
            shape: header.shape,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(header.shape, data).expect("validated length"))
}

pub fn write_tensor(path: &Path, tensor: &Tensor<f32>) -> Result<(), RecordError> {
    Ok(fs::write(path, encode_tensor(tensor))?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>, RecordError> {
    decode_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = Tensor::from_vec(
            vec![2, 2],
            vec![1.0f32, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_with_empty_shape_is_valid() {
        let t = Tensor::from_vec(vec![], vec![42.5f32]).unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back.data(), &[42.5]);
    }

    #[test]
    fn negative_zero_and_subnormals_survive() {
        let t = Tensor::from_vec(
            vec![3],
            vec![-0.0f32, f32::MIN_POSITIVE / 8.0, f32::MAX],
        )
        .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_magic_is_a_typed_error() {
        let t = Tensor::from_vec(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(RecordError::BadMagic)));
    }

    #[test]
    fn corrupted_header_byte_is_a_parse_error_not_a_crash() {
        let t = Tensor::from_vec(vec![2], vec![1.0f32, 2.0]).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes[9] = 0xFF; // inside the JSON header
        assert!(matches!(decode_tensor(&bytes), Err(RecordError::HeaderParse(_))));
    }

    #[test]
    fn truncated_payload_is_distinct_from_header_errors() {
        let t = Tensor::from_vec(vec![4], vec![1.0f32; 4]).unwrap();
        let bytes = encode_tensor(&t);
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode_tensor(cut),
            Err(RecordError::PayloadSizeMismatch { .. })
        ));
    }

    #[test]
    fn header_length_overrun_is_truncated_header() {
        let t = Tensor::from_vec(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode_tensor(&t);
        bytes[4..8].copy_from_slice(&(10_000u32).to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(RecordError::TruncatedHeader(_))));
    }
}
