use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Real-valued scalar used by the planner, the learned models and the oracles.
///
/// `Display`/`FromStr` must round-trip exactly; model files rely on it.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + FromStr + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
