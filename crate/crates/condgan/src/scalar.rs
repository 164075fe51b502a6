use num_traits::Float;

/// Element type for tensors and the autodiff tape.
///
/// Training runs in `f32`; gradient checks and numeric oracles run in `f64`
/// where central differences are meaningful at h = 1e-5. Everything generic
/// over `Scalar` behaves identically in both widths, so a graph validated in
/// f64 is the same graph that trains in f32.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
