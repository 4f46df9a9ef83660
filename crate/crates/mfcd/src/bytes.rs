//! Little-endian reading and writing shared by every binary format.

use thiserror::Error;

/// What went wrong while parsing, without position information.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Problem {
    #[error("bad magic {0:?}")]
    Magic(Vec<u8>),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("input ends inside {0}")]
    Truncated(&'static str),
    #[error("{field} out of range: {detail}")]
    Range { field: &'static str, detail: String },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
}

/// A parse failure at a byte offset of a named format.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{format} byte {offset}: {problem}")]
pub struct ParseError {
    pub format: &'static str,
    pub offset: usize,
    pub problem: Problem,
}

/// A value that does not fit the field it is written to.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{format}: {field} = {value} exceeds the format limit {max}")]
pub struct LimitError {
    pub format: &'static str,
    pub field: &'static str,
    pub value: u64,
    pub max: u64,
}

pub(crate) struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(format: &'static str, buf: &'a [u8]) -> Self {
        Self { format, buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn fail_at<T>(&self, offset: usize, problem: Problem) -> Result<T, ParseError> {
        Err(ParseError {
            format: self.format,
            offset,
            problem,
        })
    }

    pub fn range_at<T>(&self, offset: usize, field: &'static str, detail: impl Into<String>) -> Result<T, ParseError> {
        self.fail_at(
            offset,
            Problem::Range {
                field,
                detail: detail.into(),
            },
        )
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return self.fail_at(self.pos, Problem::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], ParseError> {
        Ok(self.take(N, what)?.try_into().expect("slice length is N"))
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, ParseError> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn i8(&mut self, what: &'static str) -> Result<i8, ParseError> {
        Ok(i8::from_le_bytes(self.array(what)?))
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, ParseError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn i16(&mut self, what: &'static str) -> Result<i16, ParseError> {
        Ok(i16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn f32(&mut self, what: &'static str) -> Result<f32, ParseError> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    /// Checks the magic bytes and the version field that follows them.
    pub fn preamble(&mut self, magic: &[u8], version: u16) -> Result<(), ParseError> {
        let found = self.take(magic.len(), "magic")?;
        if found != magic {
            return self.fail_at(0, Problem::Magic(found.to_vec()));
        }
        let at = self.pos;
        let v = self.u16("version")?;
        if v != version {
            return self.fail_at(at, Problem::Version(v));
        }
        Ok(())
    }

    /// Fails unless `count` items of `size` bytes can still be read, so that
    /// corrupt counts cannot trigger huge allocations.
    pub fn expect_room(&self, count: u64, size: u64, what: &'static str) -> Result<(), ParseError> {
        match count.checked_mul(size) {
            Some(n) if n <= self.remaining() as u64 => Ok(()),
            _ => self.fail_at(self.pos, Problem::Truncated(what)),
        }
    }

    pub fn finish(self) -> Result<(), ParseError> {
        match self.remaining() {
            0 => Ok(()),
            n => self.fail_at(self.pos, Problem::Trailing(n)),
        }
    }
}

/// Unsigned header field widths.
pub(crate) trait Field: TryFrom<usize> {
    const MAX: u64;
}

impl Field for u8 {
    const MAX: u64 = u8::MAX as u64;
}

impl Field for u16 {
    const MAX: u64 = u16::MAX as u64;
}

impl Field for u32 {
    const MAX: u64 = u32::MAX as u64;
}

pub(crate) fn fit<T: Field>(format: &'static str, field: &'static str, value: usize) -> Result<T, LimitError> {
    T::try_from(value).map_err(|_| LimitError {
        format,
        field,
        value: value as u64,
        max: T::MAX,
    })
}
