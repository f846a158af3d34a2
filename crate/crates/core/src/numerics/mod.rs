//! Bit-exact numeric primitives: packed integer lanes and software binary16.

pub mod fp16;
pub mod lanes;

pub use fp16::{fp16_fma, fp16_from_f64, fp16_to_f64, Fp16};
pub use lanes::{sdotp_scalar_oracle, unpack_lanes, LaneFormat, PackedVector, Precision};
