//! `MFCT` clip dumps for inspecting network inputs.
//!
//! `"MFCT" version:u16 tag:u8 C:u8 K:u8 H:u16 W:u16` then `C·K·H·W` f32 values
//! in `(C, K, H, W)` row-major order. Values are stored at single precision,
//! so a round trip is exact only for clips whose values are f32-representable.

use mfcd_core::xform::{ClipFormat, ClipTensor};

use crate::bytes::{fit, LimitError, ParseError, Reader};

pub const MAGIC: &[u8; 4] = b"MFCT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 13;

const NAME: &str = "MFCT";

pub fn to_bytes(clip: &ClipTensor) -> Result<Vec<u8>, LimitError> {
    let [c, k, h, w] = clip.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * clip.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(clip.format().tag());
    out.push(fit(NAME, "channels", c)?);
    out.push(fit(NAME, "frames", k)?);
    out.extend_from_slice(&fit::<u16>(NAME, "height", h)?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(NAME, "width", w)?.to_le_bytes());
    for &v in clip.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<ClipTensor, ParseError> {
    let mut r = Reader::new(NAME, buf);
    r.preamble(MAGIC, VERSION)?;
    let tag_at = r.offset();
    let tag = r.u8("format tag")?;
    let Ok(format) = ClipFormat::from_tag(tag) else {
        return r.range_at(tag_at, "format tag", format!("unknown tag {tag}"));
    };
    let dims_at = r.offset();
    let c = r.u8("channels")? as usize;
    let k = r.u8("frames")? as usize;
    let h = r.u16("height")? as usize;
    let w = r.u16("width")? as usize;
    let n = c * k * h * w;
    if n == 0 {
        return r.range_at(dims_at, "shape", format!("({c}, {k}, {h}, {w}) is empty"));
    }
    r.expect_room(n as u64, 4, "values")?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let v = r.f32("values")?;
        if !v.is_finite() {
            return r.range_at(at, "value", format!("{v} is not finite"));
        }
        data.push(v as f64);
    }
    r.finish()?;
    Ok(ClipTensor::new(format, c, k, h, w, data).expect("validated clip shape"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_of_f32_representable_clip() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 5).map(|i| i as f64 / 8.0 - 3.0).collect();
        let clip = ClipTensor::new(ClipFormat::ResOnly, 2, 3, 2, 5, data).unwrap();
        let bytes = to_bytes(&clip).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 60);
        assert_eq!(bytes[6], ClipFormat::ResOnly.tag());
        assert_eq!(from_bytes(&bytes).unwrap(), clip);
    }

    #[test]
    fn rejects_unknown_tag_and_nan() {
        let clip = ClipTensor::new(ClipFormat::Full, 1, 1, 1, 1, vec![0.5]).unwrap();
        let mut bytes = to_bytes(&clip).unwrap();
        bytes[HEADER_LEN..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(from_bytes(&bytes).unwrap_err().offset, HEADER_LEN);
        bytes[6] = 4;
        assert_eq!(from_bytes(&bytes).unwrap_err().offset, 6);
    }
}
