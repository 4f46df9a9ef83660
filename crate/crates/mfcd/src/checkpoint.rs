//! `MFCDW` parameter checkpoints.
//!
//! ```text
//! "MFCDW" version:u16 count:u32
//! per tensor: name_len:u16 name:utf8 rank:u8 extents:u32×rank values:f32×Πextents
//! ```
//!
//! Values are written with `f32::to_le_bytes`, so single-precision tensors
//! round-trip bit for bit (NaN payloads included).

use mfcd_core::model::NamedTensor;
use mfcd_core::tensor::Tensor;

use crate::bytes::{fit, LimitError, ParseError, Problem, Reader};

pub const MAGIC: &[u8; 5] = b"MFCDW";
pub const VERSION: u16 = 1;

const NAME: &str = "MFCDW";

pub fn to_bytes<'a>(tensors: impl IntoIterator<Item = &'a NamedTensor<f32>>) -> Result<Vec<u8>, LimitError> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::from(*MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fit::<u32>(NAME, "tensor count", tensors.len())?.to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&fit::<u16>(NAME, "name length", t.name.len())?.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        let shape = t.value.shape();
        out.push(fit(NAME, "rank", shape.len())?);
        for &d in shape {
            out.extend_from_slice(&fit::<u32>(NAME, "extent", d)?.to_le_bytes());
        }
        for v in t.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<Vec<NamedTensor<f32>>, ParseError> {
    let mut r = Reader::new(NAME, buf);
    r.preamble(MAGIC, VERSION)?;
    let count = r.u32("tensor count")?;
    // Smallest possible entry: empty name, rank 0, one value.
    r.expect_room(count as u64, 2 + 1 + 4, "tensors")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_at = r.offset();
        let len = r.u16("name length")? as usize;
        let Ok(name) = std::str::from_utf8(r.take(len, "name")?) else {
            return r.range_at(name_at, "name", "not UTF-8");
        };
        let name = name.to_owned();
        let rank = r.u8("rank")? as usize;
        let shape_at = r.offset();
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape.contains(&0) {
            return r.range_at(shape_at, "extent", format!("zero extent in {shape:?}"));
        }
        let Some(n) = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64)) else {
            return r.fail_at(shape_at, Problem::Truncated("values"));
        };
        r.expect_room(n, 4, "values")?;
        let data = (0..n).map(|_| r.f32("values")).collect::<Result<Vec<_>, _>>()?;
        let value = Tensor::new(shape, data).expect("length matches extents");
        out.push(NamedTensor { name, value });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfcd_core::model::{Model, ModelConfig};

    #[test]
    fn model_round_trip_is_bit_exact() {
        let model = Model::<f32>::build(&ModelConfig::default(), 5).unwrap();
        let bytes = to_bytes(model.named_tensors()).unwrap();
        assert_eq!(&bytes[..5], b"MFCDW");
        let back = from_bytes(&bytes).unwrap();
        let orig: Vec<_> = model.named_tensors().collect();
        assert_eq!(back.len(), orig.len());
        for (a, b) in back.iter().zip(orig) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        let mut fresh = Model::<f32>::build(&ModelConfig::default(), 6).unwrap();
        fresh.load_named(back).unwrap();
        assert_eq!(to_bytes(fresh.named_tensors()).unwrap(), bytes);
    }

    #[test]
    fn special_values_keep_their_bits() {
        let vals = [f32::NAN, -0.0, f32::INFINITY, f32::MIN_POSITIVE / 4.0];
        let t = NamedTensor {
            name: "odd".into(),
            value: Tensor::new(vec![4], vals.to_vec()).unwrap(),
        };
        let back = from_bytes(&to_bytes([&t]).unwrap()).unwrap();
        let bits: Vec<u32> = back[0].value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, vals.map(f32::to_bits));
    }

    #[test]
    fn rejects_overflowing_extents() {
        let mut bytes = Vec::from(*MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        bytes.extend_from_slice(&[0; 8]);
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!(e.problem, Problem::Truncated("values"));
    }
}
