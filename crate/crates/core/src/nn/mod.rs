//! Parameter registry, forward-pass sessions and the basic layers the
//! network is assembled from.

mod layers;
mod params;

pub use layers::{BatchNorm, Conv, Linear, BN_EPS, BN_MOMENTUM};
pub use params::{he_uniform, BnUpdate, Mode, ParamEntry, ParamId, ParamKind, ParamStore, Session};
