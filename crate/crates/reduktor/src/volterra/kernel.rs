use std::fmt;
use std::sync::Arc;

type AFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type BFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Reduction kernel `(a, b)`: `a(T)` weighs the bare evolution, `b(t, T)` the
/// last reduction at `t`. Normalization requires `∫₀ᵀ b(t, T) dt = 1 − a(T)`.
#[derive(Clone)]
pub struct Kernel {
    a: AFn,
    b: BFn,
    pub tag: String,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("tag", &self.tag)
            .finish_non_exhaustive()
    }
}

impl Kernel {
    pub fn new(
        tag: impl Into<String>,
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            a: Arc::new(a),
            b: Arc::new(b),
            tag: tag.into(),
        }
    }

    /// `a(T) = e^{−νT}`, `b(t, T) = ν e^{−ν(T − t)}`.
    pub fn poisson(nu: f64) -> Self {
        Self::new(
            format!("poisson(nu={nu})"),
            move |t| (-nu * t).exp(),
            move |t, big_t| nu * (-nu * (big_t - t)).exp(),
        )
    }

    /// `a ≡ 1`, `b ≡ 0`.
    pub fn no_reduction() -> Self {
        Self::new("none", |_| 1.0, |_, _| 0.0)
    }

    /// `a(T) = b(t, T) = 1 / (1 + T)`.
    pub fn rational() -> Self {
        Self::new(
            "rational",
            |t| 1.0 / (1.0 + t),
            |_, big_t| 1.0 / (1.0 + big_t),
        )
    }

    /// Same `a`, `b` multiplied by `factor`. Breaks normalization unless `factor = 1`.
    pub fn scale_b(self, factor: f64) -> Self {
        let b = self.b.clone();
        Self {
            a: self.a,
            b: Arc::new(move |t, big_t| factor * b(t, big_t)),
            tag: format!("{}*{factor}", self.tag),
        }
    }

    pub fn a(&self, big_t: f64) -> f64 {
        (self.a)(big_t)
    }

    pub fn b(&self, t: f64, big_t: f64) -> f64 {
        (self.b)(t, big_t)
    }
}

fn trapezoid(kernel: &Kernel, big_t: f64, steps: usize) -> f64 {
    let h = big_t / steps as f64;
    let inner: f64 = (1..steps).map(|k| kernel.b(k as f64 * h, big_t)).sum();
    h * (inner + 0.5 * (kernel.b(0.0, big_t) + kernel.b(big_t, big_t)))
}

/// `|∫₀ᵀ b(t, T) dt + a(T) − 1|`.
///
/// The integral is the trapezoid sum on `quad_steps` panels with one
/// Richardson step against the sum on half as many panels.
pub fn kernel_normalization_residual(kernel: &Kernel, big_t: f64, quad_steps: usize) -> f64 {
    if big_t <= 0.0 {
        return (kernel.a(0.0) - 1.0).abs();
    }
    let steps = quad_steps.max(2) & !1;
    let fine = trapezoid(kernel, big_t, steps);
    let coarse = trapezoid(kernel, big_t, steps / 2);
    let integral = fine + (fine - coarse) / 3.0;
    (integral + kernel.a(big_t) - 1.0).abs()
}
