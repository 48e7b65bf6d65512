#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod losses;
pub mod model;
pub mod numerics;
pub mod probes;
pub mod sampler;
pub mod store;
pub mod trainer;
mod wire;
