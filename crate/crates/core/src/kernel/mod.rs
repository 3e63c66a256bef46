//! Special functions, nonstandard samplers and the seedable random source
//! shared by every stochastic component.

mod rng;
pub mod sample;
pub mod special;

pub use rng::RandomSource;
pub use sample::{sample_categorical, sample_truncated_gamma, sample_truncated_normal};
pub use special::{digamma, trigamma};
