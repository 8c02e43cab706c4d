//! Item feature assembly: the attribute vector (learned block followed by the
//! color histogram) and padded token matrices for the text encoder.

mod color;
mod text;

pub use color::{quantize_colors, ColorVector};
pub use text::{embed_tokens, Embeddings, TokenMatrix, DEFAULT_EMBED_DIM, DEFAULT_L_MAX};

use crate::error::{Error, Result};

pub const LEARNED_DIM: usize = 2040;
pub const COLOR_DIM: usize = 8;
pub const ATTR_DIM: usize = LEARNED_DIM + COLOR_DIM;

/// Concatenates `[learned; color]` into the 2048-wide attribute vector.
pub fn assemble_attr_vec(learned: &[f64], color: &ColorVector) -> Result<Vec<f64>> {
    if learned.len() != LEARNED_DIM {
        return Err(Error::Shape(format!(
            "learned block has {} entries, expected {LEARNED_DIM}",
            learned.len()
        )));
    }
    if color.len() != COLOR_DIM {
        return Err(Error::Shape(format!(
            "color vector has {} entries, expected {COLOR_DIM}",
            color.len()
        )));
    }
    if let Some(v) = learned.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(Error::InvalidData(format!("learned activation {v} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(ATTR_DIM);
    out.extend_from_slice(learned);
    out.extend_from_slice(color.values());
    Ok(out)
}

/// Inverse of [`assemble_attr_vec`].
pub fn split_attr_vec(v: &[f64]) -> Result<(&[f64], &[f64])> {
    if v.len() != ATTR_DIM {
        return Err(Error::Shape(format!(
            "attribute vector has {} entries, expected {ATTR_DIM}",
            v.len()
        )));
    }
    Ok(v.split_at(LEARNED_DIM))
}
