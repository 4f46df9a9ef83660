//! `MFCS` compressed streams.
//!
//! Little-endian layout:
//!
//! ```text
//! "MFCS" version:u16 W:u16 H:u16 C:u8 B:u8 S:u8 gop_count:u32
//! per GOP:     frame_count:u8  I-frame pixels (H·W·C bytes)
//! per P-frame: (dy:i8, dx:i8) per block, block row-major
//!              residual:i16 per sample, row-major, channel-last
//! ```

use mfcd_core::codec::{CompressedStream, Frame, Gop, MotionField, MotionVector, PFrame, ResidualFrame, StreamHeader};

use crate::bytes::{fit, LimitError, ParseError, Reader};

pub const MAGIC: &[u8; 4] = b"MFCS";
pub const VERSION: u16 = 1;
/// Size of the fixed header.
pub const HEADER_LEN: usize = 17;

const NAME: &str = "MFCS";

pub fn to_bytes(stream: &CompressedStream) -> Result<Vec<u8>, LimitError> {
    let h = &stream.header;
    let mut out = Vec::with_capacity(HEADER_LEN + stream.frame_count() * h.width * h.height * h.channels * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(NAME, "width", h.width)?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(NAME, "height", h.height)?.to_le_bytes());
    out.push(fit(NAME, "channels", h.channels)?);
    out.push(fit(NAME, "block", h.block)?);
    out.push(fit(NAME, "search", h.search)?);
    out.extend_from_slice(&fit::<u32>(NAME, "gop count", stream.gops.len())?.to_le_bytes());
    for gop in &stream.gops {
        out.push(fit(NAME, "frames per GOP", gop.len())?);
        out.extend_from_slice(gop.iframe.pixels());
        for p in &gop.pframes {
            for mv in p.motion.vectors() {
                for c in [mv.dy, mv.dx] {
                    let v = i8::try_from(c).map_err(|_| LimitError {
                        format: NAME,
                        field: "motion component",
                        value: c.unsigned_abs() as u64,
                        max: i8::MAX as u64,
                    })?;
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            for r in p.residual.values() {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<CompressedStream, ParseError> {
    let mut r = Reader::new(NAME, buf);
    r.preamble(MAGIC, VERSION)?;
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
    let block_at = r.offset();
    let block = r.u8("block")? as usize;
    if block == 0 || !height.is_multiple_of(block) || !width.is_multiple_of(block) {
        return r.range_at(block_at, "block", format!("{block} does not tile {width}x{height}"));
    }
    let search = r.u8("search")? as usize;
    let gop_count = r.u32("gop count")?;
    let plane = width * height * channels;
    r.expect_room(gop_count as u64, 1 + plane as u64, "GOPs")?;
    let (rows, cols) = (height / block, width / block);

    let mut gops = Vec::with_capacity(gop_count as usize);
    let mut nominal = None;
    for g in 0..gop_count {
        let count_at = r.offset();
        let frames = r.u8("frame count")? as usize;
        let first = *nominal.get_or_insert(frames);
        let last = g + 1 == gop_count;
        if frames == 0 || frames > first || (!last && frames != first) {
            return r.range_at(
                count_at,
                "frame count",
                format!("GOP {g} has {frames} frames, first GOP has {first}"),
            );
        }
        let iframe =
            Frame::new(height, width, channels, r.take(plane, "I-frame")?.to_vec()).expect("validated frame shape");
        let mut pframes = Vec::with_capacity(frames - 1);
        for _ in 1..frames {
            let mut vectors = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let at = r.offset();
                let (dy, dx) = (r.i8("motion")? as i32, r.i8("motion")? as i32);
                if dy.unsigned_abs() as usize > search || dx.unsigned_abs() as usize > search {
                    return r.range_at(at, "motion", format!("({dy}, {dx}) exceeds search range {search}"));
                }
                vectors.push(MotionVector::new(dy, dx));
            }
            let mut values = Vec::with_capacity(plane);
            for _ in 0..plane {
                let at = r.offset();
                let v = r.i16("residual")?;
                if v.unsigned_abs() > 255 {
                    return r.range_at(at, "residual", format!("{v} exceeds 255 in magnitude"));
                }
                values.push(v);
            }
            pframes.push(PFrame {
                motion: MotionField::new(rows, cols, block, vectors).expect("validated field shape"),
                residual: ResidualFrame::new(height, width, channels, values).expect("validated residual shape"),
            });
        }
        gops.push(Gop { iframe, pframes });
    }
    r.finish()?;
    Ok(CompressedStream {
        header: StreamHeader {
            width,
            height,
            channels,
            block,
            search,
        },
        gops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytes::Problem;
    use mfcd_core::codec::{encode, CodecParams, RawVideo};

    fn video(frames: usize) -> RawVideo {
        let frames = (0..frames)
            .map(|k| {
                let px = (0..16 * 16 * 3).map(|i| ((i * 7 + k * 3) % 251) as u8).collect();
                Frame::new(16, 16, 3, px).unwrap()
            })
            .collect();
        RawVideo::new(frames).unwrap()
    }

    fn stream(frames: usize) -> CompressedStream {
        encode(
            &video(frames),
            CodecParams {
                block: 8,
                search: 3,
                gop_size: 4,
            },
        )
        .unwrap()
    }

    #[test]
    fn header_only_stream_is_seventeen_bytes() {
        let s = CompressedStream {
            header: StreamHeader {
                width: 32,
                height: 32,
                channels: 3,
                block: 8,
                search: 7,
            },
            gops: vec![],
        };
        let bytes = to_bytes(&s).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn partial_final_gop_round_trips() {
        let s = stream(10);
        assert_eq!(s.gops.iter().map(Gop::len).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(from_bytes(&to_bytes(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = to_bytes(&stream(4)).unwrap();
        bytes[4] = 9;
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!((e.offset, e.problem), (4, Problem::Version(9)));
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes).unwrap_err().problem, Problem::Magic(_)));
    }

    #[test]
    fn rejects_out_of_range_motion_at_its_offset() {
        let mut bytes = to_bytes(&stream(4)).unwrap();
        let at = HEADER_LEN + 1 + 16 * 16 * 3;
        bytes[at] = 4u8; // search range is 3
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!(e.offset, at);
        assert!(matches!(e.problem, Problem::Range { field: "motion", .. }));
    }

    #[test]
    fn rejects_out_of_range_residual_at_its_offset() {
        let mut bytes = to_bytes(&stream(4)).unwrap();
        let at = HEADER_LEN + 1 + 16 * 16 * 3 + 2 * 4 + 10;
        bytes[at..at + 2].copy_from_slice(&256i16.to_le_bytes());
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!(e.offset, at);
        assert!(matches!(e.problem, Problem::Range { field: "residual", .. }));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = to_bytes(&stream(4)).unwrap();
        for cut in [3, 10, HEADER_LEN + 5, bytes.len() - 1] {
            let e = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e.problem, Problem::Truncated(_)), "cut {cut}: {e}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(from_bytes(&long).unwrap_err().problem, Problem::Trailing(1));
    }

    #[test]
    fn rejects_a_short_gop_before_the_last() {
        let mut bytes = to_bytes(&stream(12)).unwrap();
        let plane = 16 * 16 * 3;
        let second = HEADER_LEN + 1 + plane + 3 * (2 * 4 + 2 * plane);
        assert_eq!(bytes[second], 4);
        bytes[second] = 3;
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!(e.offset, second);
    }

    #[test]
    fn rejects_blocks_that_do_not_tile() {
        let mut bytes = to_bytes(&stream(4)).unwrap();
        bytes[11] = 5;
        let e = from_bytes(&bytes).unwrap_err();
        assert_eq!(e.offset, 11);
    }
}
