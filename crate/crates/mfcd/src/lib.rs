//! Files, datasets and the command-line driver around [`mfcd_core`].
//!
//! Binary formats (all little-endian):
//!
//! | magic   | module           | contents                         |
//! |---------|------------------|----------------------------------|
//! | `MFCS`  | [`stream`]       | compressed GOP stream            |
//! | `MFRV`  | [`video`]        | raw 8-bit video                  |
//! | `MFCT`  | [`clip`]         | one network-ready clip           |
//! | `MFCDW` | [`checkpoint`]   | named model parameters           |

pub mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod clip;
pub mod dataset;
pub mod experiment;
pub mod settings;
pub mod stream;
pub mod video;

pub use bytes::{LimitError, ParseError, Problem};
pub use settings::Settings;
