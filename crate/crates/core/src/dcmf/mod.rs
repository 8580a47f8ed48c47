//! Direction-aware cross-median filtering and the cross-branch frequency
//! exchange built on it.

mod attention;
mod direction;
mod exchange;
mod median;

pub use attention::{DirectionAttention, SeBlock, ATTENTION_REDUCTION};
pub use direction::{DirectionLabel, DirectionSpec, Offset};
pub use exchange::{CmfBank, Hilo, HiloSplit, Liho, LihoSplit};

/// Default line length of the median filters.
pub const DEFAULT_CMF_K: usize = 5;
