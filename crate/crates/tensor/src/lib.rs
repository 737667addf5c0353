//! Dense 2-D tensor engine with reverse-mode automatic differentiation.
//!
//! Every tensor is a row-major matrix; vectors are 1×n and scalars 1×1.
//! A [`graph::Graph`] is an append-only record of eagerly evaluated
//! operations: building a node computes its value immediately, and
//! [`graph::Graph::backward`] walks the record once in reverse to
//! accumulate parameter gradients.
//!
//! Values are held as f64. In [`Precision::F32`] mode every operation
//! output is rounded through f32, so training matches what a 32-bit
//! engine would produce while gradient checks can run in full f64.
//!
//! Shape mismatches are programming errors, not data errors, and panic
//! with the operation name and both shapes.

pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod nn;
pub mod store;

/// Numeric precision for forward values and parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }

    pub fn round_vec(self, values: &mut [f64]) {
        if self == Precision::F32 {
            for v in values {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_rounding_quantizes() {
        let v = 0.1f64;
        assert_ne!(Precision::F32.round(v), v);
        assert_eq!(Precision::F32.round(v), 0.1f32 as f64);
        assert_eq!(Precision::F64.round(v), v);
    }
}
