//! Numerical machinery for Fourier extension over flat perturbations of the
//! saddle `xy`: level-band interval partitions, transversality geometry,
//! oscillatory extension quadrature and slowly decaying wave packets.
//!
//! The one-variable engine, the level-band partition and the transversality
//! algebra are generic over [`Scalar`] (`f32` or `f64`); the quadrature-heavy
//! modules work in `f64`. Concrete aliases for the common case live at the
//! crate root.

pub mod error;
pub mod extension;
pub mod funcore;
pub mod geometry;
pub mod levelband;
mod jet;
pub mod wavepacket;

pub use error::{Error, Result};

use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating point types the generic parts of the crate run on.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type SmoothFn = funcore::SmoothFn1D<f64>;
pub type SmoothFnF32 = funcore::SmoothFn1D<f32>;
pub type Partition = levelband::LevelBandPartition<f64>;
pub type Surface = geometry::PhaseSurface<f64>;
pub type Point = geometry::Point2<f64>;





