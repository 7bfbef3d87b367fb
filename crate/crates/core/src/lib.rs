pub mod analysis;
pub mod circuit;
pub mod codes;
pub mod decoder;
pub mod dem;
pub mod linalg;
pub mod sim;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar used by belief propagation and the statistics helpers.
pub trait Real: Float + FromPrimitive + Send + Sync + Debug + Display + 'static {}

impl<T: Float + FromPrimitive + Send + Sync + Debug + Display + 'static> Real for T {}

pub type BpOsd = decoder::BpOsdDecoder<f64>;
pub type BpOsdF32 = decoder::BpOsdDecoder<f32>;
