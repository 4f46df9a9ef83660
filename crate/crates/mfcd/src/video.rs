//! `MFRV` raw video files: `"MFRV" version:u16 frame_count:u32 W:u16 H:u16 C:u8`
//! followed by the frames as raw row-major, channel-last bytes.

use mfcd_core::codec::{Frame, RawVideo};

use crate::bytes::{fit, LimitError, ParseError, Reader};

pub const MAGIC: &[u8; 4] = b"MFRV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 15;

const NAME: &str = "MFRV";

pub fn to_bytes(video: &RawVideo) -> Result<Vec<u8>, LimitError> {
    let plane = video.height() * video.width() * video.channels();
    let mut out = Vec::with_capacity(HEADER_LEN + plane * video.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fit::<u32>(NAME, "frame count", video.len())?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(NAME, "width", video.width())?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(NAME, "height", video.height())?.to_le_bytes());
    out.push(fit(NAME, "channels", video.channels())?);
    for f in video.frames() {
        out.extend_from_slice(f.pixels());
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<RawVideo, ParseError> {
    let mut r = Reader::new(NAME, buf);
    r.preamble(MAGIC, VERSION)?;
    let count_at = r.offset();
    let count = r.u32("frame count")?;
    if count == 0 {
        return r.range_at(count_at, "frame count", "a video needs at least one frame");
    }
    let dims_at = r.offset();
    let width = r.u16("width")? as usize;
    let height = r.u16("height")? as usize;
    if width == 0 || height == 0 {
        return r.range_at(dims_at, "frame size", format!("{width}x{height}"));
    }
    let channels_at = r.offset();
    let channels = r.u8("channels")? as usize;
    if channels != 1 && channels != 3 {
        return r.range_at(channels_at, "channels", format!("{channels} is neither 1 nor 3"));
    }
    let plane = width * height * channels;
    r.expect_room(count as u64, plane as u64, "frames")?;
    let frames = (0..count)
        .map(|_| {
            let px = r.take(plane, "frame")?.to_vec();
            Ok(Frame::new(height, width, channels, px).expect("validated frame shape"))
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    r.finish()?;
    Ok(RawVideo::new(frames).expect("frames share one shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytes::Problem;

    #[test]
    fn round_trip_and_layout() {
        let frames = (0..3u8)
            .map(|k| Frame::new(2, 4, 1, (0..8).map(|i| i * 10 + k).collect()).unwrap())
            .collect();
        let v = RawVideo::new(frames).unwrap();
        let bytes = to_bytes(&v).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 8);
        assert_eq!(&bytes[6..10], &3u32.to_le_bytes());
        assert_eq!(&bytes[10..12], &4u16.to_le_bytes());
        assert_eq!(&bytes[12..14], &2u16.to_le_bytes());
        assert_eq!(bytes[14], 1);
        assert_eq!(from_bytes(&bytes).unwrap(), v);
    }

    #[test]
    fn huge_frame_count_is_truncation_not_allocation() {
        let mut bytes = Vec::from(*MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&[255, 255, 255, 255, 3]);
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!((e.offset, e.problem), (HEADER_LEN, Problem::Truncated("frames")));
    }

    #[test]
    fn rejects_zero_frames_and_bad_channels() {
        let v = RawVideo::new(vec![Frame::filled(2, 2, 3, 7).unwrap()]).unwrap();
        let mut bytes = to_bytes(&v).unwrap();
        bytes[14] = 2;
        assert_eq!(from_bytes(&bytes).unwrap_err().offset, 14);
        bytes[6] = 0;
        assert_eq!(from_bytes(&bytes).unwrap_err().offset, 6);
    }
}
