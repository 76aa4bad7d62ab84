//! Activation functions with exact analytic first derivatives.
//!
//! Two things distinguish this zoo from a plain activation library:
//!
//! * every kind reports its derivative's one-sided limits at 0, so the C¹
//!   status of a configuration can be certified numerically and analytically;
//! * forward and backward behavior are selected independently through
//!   [`ActivationPair`], which lets an attacker or optimizer substitute a
//!   smooth derivative while inference still runs the original function.

use crate::fmath;
use crate::tensor::Tensor;
use alloc::vec::Vec;
use core::fmt;

/// Supported activation functions. `alpha` must be positive wherever present.
///
/// `SmoothRelu`'s `alpha` is the only learnable parameter; the value stored in
/// the enum is its initial (or fixed) value, and during training the current
/// per-layer value is supplied by the model parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    Softplus,
    ParametricSoftplus { alpha: f64 },
    Silu,
    Gelu,
    Elu { alpha: f64 },
    Celu { alpha: f64 },
    SmoothRelu { alpha: f64 },
}

/// Invalid activation parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ActivationError {
    NonPositiveAlpha { kind: &'static str, alpha: f64 },
}

impl fmt::Display for ActivationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationError::NonPositiveAlpha { kind, alpha } => {
                write!(f, "{kind} requires alpha > 0, got {alpha}")
            }
        }
    }
}

impl ActivationKind {
    /// Lowercase name used in config files and reports.
    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Softplus => "softplus",
            ActivationKind::ParametricSoftplus { .. } => "psoftplus",
            ActivationKind::Silu => "silu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Elu { .. } => "elu",
            ActivationKind::Celu { .. } => "celu",
            ActivationKind::SmoothRelu { .. } => "smoothrelu",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            ActivationKind::ParametricSoftplus { alpha }
            | ActivationKind::Elu { alpha }
            | ActivationKind::Celu { alpha }
            | ActivationKind::SmoothRelu { alpha } => Some(*alpha),
            _ => None,
        }
    }

    /// Same kind with a different `alpha` (no-op for parameterless kinds).
    pub fn with_alpha(&self, alpha: f64) -> Self {
        match self {
            ActivationKind::ParametricSoftplus { .. } => {
                ActivationKind::ParametricSoftplus { alpha }
            }
            ActivationKind::Elu { .. } => ActivationKind::Elu { alpha },
            ActivationKind::Celu { .. } => ActivationKind::Celu { alpha },
            ActivationKind::SmoothRelu { .. } => ActivationKind::SmoothRelu { alpha },
            other => *other,
        }
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        if let Some(alpha) = self.alpha() {
            if !(alpha > 0.0) {
                return Err(ActivationError::NonPositiveAlpha {
                    kind: self.name(),
                    alpha,
                });
            }
        }
        Ok(())
    }

    /// True when the derivative is continuous everywhere (C¹).
    pub fn is_smooth(&self) -> bool {
        match self {
            ActivationKind::Relu => false,
            ActivationKind::Elu { alpha } => *alpha == 1.0,
            _ => true,
        }
    }

    /// Scalar forward value.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Relu => fmath::max(x, 0.0),
            ActivationKind::Softplus => fmath::softplus(x),
            ActivationKind::ParametricSoftplus { alpha } => fmath::softplus(alpha * x) / alpha,
            ActivationKind::Silu => x * fmath::sigmoid(x),
            ActivationKind::Gelu => x * gauss_cdf(x),
            ActivationKind::Elu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * fmath::expm1(x)
                }
            }
            ActivationKind::Celu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * fmath::expm1(x / alpha)
                }
            }
            ActivationKind::SmoothRelu { alpha } => {
                if x >= 0.0 {
                    x - fmath::ln_1p(alpha * x) / alpha
                } else {
                    0.0
                }
            }
        }
    }

    /// Scalar analytic derivative. ReLU's derivative at exactly 0 is defined
    /// as 0 so tests are deterministic.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Softplus => fmath::sigmoid(x),
            ActivationKind::ParametricSoftplus { alpha } => fmath::sigmoid(alpha * x),
            ActivationKind::Silu => {
                let s = fmath::sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::Gelu => gauss_cdf(x) + x * gauss_pdf(x),
            ActivationKind::Elu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha * fmath::exp(x)
                }
            }
            ActivationKind::Celu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    fmath::exp(x / alpha)
                }
            }
            ActivationKind::SmoothRelu { alpha } => {
                if x >= 0.0 {
                    alpha * x / (1.0 + alpha * x)
                } else {
                    0.0
                }
            }
        }
    }

    /// One-sided analytic derivative limits at 0: `(left, right)`.
    pub fn derivative_limits_at_zero(&self) -> (f64, f64) {
        match *self {
            ActivationKind::Relu => (0.0, 1.0),
            ActivationKind::Softplus | ActivationKind::ParametricSoftplus { .. } => (0.5, 0.5),
            ActivationKind::Silu => (0.5, 0.5),
            ActivationKind::Gelu => (0.5, 0.5),
            ActivationKind::Elu { alpha } => (alpha, 1.0),
            ActivationKind::Celu { .. } => (1.0, 1.0),
            ActivationKind::SmoothRelu { .. } => (0.0, 0.0),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha() {
            Some(alpha) => write!(f, "{}(alpha={alpha})", self.name()),
            None => write!(f, "{}", self.name()),
        }
    }
}

/// Φ, the standard normal CDF, via the complementary error function (not the
/// tanh approximation: approximation error would contaminate derivative
/// checks). The erfc form keeps full relative precision in the deep negative
/// tail, where `1 + erf(x)` cancels.
#[inline]
fn gauss_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// φ, the standard normal density.
#[inline]
fn gauss_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * fmath::exp(-0.5 * x * x)
}

// ── Forward/backward decoupling ─────────────────────────────────────────────

/// Independently selected forward function and backward derivative.
///
/// The backward derivative is always evaluated at the same pre-activation
/// input the forward saw. Forward outputs depend only on `forward`; gradients
/// depend only on `backward`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationPair {
    pub forward: ActivationKind,
    pub backward: ActivationKind,
}

impl ActivationPair {
    pub fn new(forward: ActivationKind, backward: ActivationKind) -> Self {
        ActivationPair { forward, backward }
    }

    /// Same function in both passes (the ordinary, un-probed configuration).
    pub fn symmetric(kind: ActivationKind) -> Self {
        ActivationPair {
            forward: kind,
            backward: kind,
        }
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        self.forward.validate()?;
        self.backward.validate()
    }

    /// True when either side carries a learnable SmoothReLU alpha.
    pub fn uses_learnable_alpha(&self) -> bool {
        matches!(self.forward, ActivationKind::SmoothRelu { .. })
            || matches!(self.backward, ActivationKind::SmoothRelu { .. })
    }
}

// ── Tensor-level operations ─────────────────────────────────────────────────

/// Elementwise forward application.
pub fn act_forward(kind: ActivationKind, x: &Tensor) -> Result<Tensor, ActivationError> {
    kind.validate()?;
    Ok(x.map(|v| kind.value(v)))
}

/// Elementwise analytic derivative, evaluated at the pre-activation inputs.
pub fn act_derivative(kind: ActivationKind, x: &Tensor) -> Result<Tensor, ActivationError> {
    kind.validate()?;
    Ok(x.map(|v| kind.derivative(v)))
}

/// Per-element ∂f/∂α for SmoothReLU: `(1/α²)[ln(1+αx) − αx/(1+αx)]` for
/// `x ≥ 0`, else 0. The layer gradient is the sum over all elements sharing
/// that alpha.
pub fn act_alpha_gradient(alpha: f64, x: &Tensor) -> Result<Tensor, ActivationError> {
    ActivationKind::SmoothRelu { alpha }.validate()?;
    Ok(x.map(|v| smoothrelu_alpha_grad(alpha, v)))
}

#[inline]
pub(crate) fn smoothrelu_alpha_grad(alpha: f64, x: f64) -> f64 {
    if x >= 0.0 {
        let ax = alpha * x;
        (fmath::ln_1p(ax) - ax / (1.0 + ax)) / (alpha * alpha)
    } else {
        0.0
    }
}

// ── Smoothness certification ────────────────────────────────────────────────

/// Derivative behavior of a kind around 0: analytic one-sided limits, numeric
/// probes just off 0, and the analytic jump.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport {
    pub kind: ActivationKind,
    /// Analytic derivative limit as x → 0⁻.
    pub left_limit: f64,
    /// Analytic derivative limit as x → 0⁺.
    pub right_limit: f64,
    /// Derivative evaluated at x = −1e-8.
    pub left_probe: f64,
    /// Derivative evaluated at x = +1e-8.
    pub right_probe: f64,
    /// `|right_limit − left_limit|`, from the analytic limits.
    pub jump: f64,
}

/// Quantify the C¹ status of an activation kind at the origin.
pub fn smoothness_report(kind: ActivationKind) -> SmoothnessReport {
    let (left, right) = kind.derivative_limits_at_zero();
    SmoothnessReport {
        kind,
        left_limit: left,
        right_limit: right,
        left_probe: kind.derivative(-1e-8),
        right_probe: kind.derivative(1e-8),
        jump: fmath::abs(right - left),
    }
}

/// The canonical kind/alpha combinations exercised by derivative checks and
/// the gradcheck command.
pub fn preset_kinds() -> Vec<ActivationKind> {
    let mut kinds = alloc::vec![
        ActivationKind::Relu,
        ActivationKind::Softplus,
        ActivationKind::Silu,
        ActivationKind::Gelu,
    ];
    for alpha in [1.0, 10.0, 100.0] {
        kinds.push(ActivationKind::ParametricSoftplus { alpha });
    }
    for alpha in [1.0, 1.2, 1.4, 1.6, 1.8, 2.0] {
        kinds.push(ActivationKind::Elu { alpha });
        kinds.push(ActivationKind::Celu { alpha });
    }
    for alpha in [1.0, 10.0, 100.0, 400.0, 1000.0] {
        kinds.push(ActivationKind::SmoothRelu { alpha });
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::finite_difference_grad;

    fn val(kind: ActivationKind, x: f64) -> f64 {
        act_forward(kind, &Tensor::scalar(x)).unwrap().item()
    }

    fn der(kind: ActivationKind, x: f64) -> f64 {
        act_derivative(kind, &Tensor::scalar(x)).unwrap().item()
    }

    #[test]
    fn forward_values_match_direct_evaluation() {
        // High-precision references evaluated independently.
        let psp10 = ActivationKind::ParametricSoftplus { alpha: 10.0 };
        assert!((val(psp10, 0.0) - 0.06931471805599453).abs() < 1e-15);
        assert!((val(psp10, 1.0) - 1.0000045398899217).abs() < 1e-12);
        assert_eq!(val(ActivationKind::Silu, 0.0), 0.0);
        assert_eq!(val(ActivationKind::Gelu, 0.0), 0.0);
        assert_eq!(val(ActivationKind::SmoothRelu { alpha: 400.0 }, 0.0), 0.0);
        assert!((val(ActivationKind::Elu { alpha: 1.0 }, -1.0) - (-0.6321205588285577)).abs() < 1e-15);
        assert!((val(ActivationKind::Celu { alpha: 2.0 }, -1.0) - (-0.7869386805747331)).abs() < 1e-15);
        assert!(
            (val(ActivationKind::SmoothRelu { alpha: 400.0 }, 1.0) - 0.9850150964317336).abs()
                < 1e-14
        );
    }

    #[test]
    fn derivative_values() {
        let psp10 = ActivationKind::ParametricSoftplus { alpha: 10.0 };
        assert_eq!(der(psp10, 0.0), 0.5);
        // ELU(2) just left of zero tends to 2; CELU(2) to 1.
        assert!((der(ActivationKind::Elu { alpha: 2.0 }, -1e-12) - 2.0).abs() < 1e-9);
        assert!((der(ActivationKind::Celu { alpha: 2.0 }, -1e-12) - 1.0).abs() < 1e-9);
        assert!(
            (der(ActivationKind::SmoothRelu { alpha: 400.0 }, 1.0) - 0.9975062344139651).abs()
                < 1e-15
        );
        assert_eq!(der(ActivationKind::Relu, 0.0), 0.0);
    }

    #[test]
    fn rejects_non_positive_alpha() {
        let bad = ActivationKind::ParametricSoftplus { alpha: -1.0 };
        assert!(act_forward(bad, &Tensor::scalar(0.0)).is_err());
        assert!(act_derivative(bad, &Tensor::scalar(0.0)).is_err());
        assert!(act_alpha_gradient(0.0, &Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn stable_for_large_inputs() {
        let psp10 = ActivationKind::ParametricSoftplus { alpha: 10.0 };
        // alpha*x = 1e4 overflows a naive ln(1+exp(..)).
        let v = val(psp10, 1e3);
        assert!(v.is_finite());
        assert!((v - 1e3).abs() < 1e-9);
        assert_eq!(der(psp10, 1e3), 1.0);
        assert!(val(ActivationKind::Softplus, -1e4).abs() < 1e-300);
    }

    #[test]
    fn derivatives_match_finite_differences_on_grid() {
        // Per-kind step size keeps the truncation error below the tolerance
        // even for sharply curved large-alpha kinds and near derivative
        // zero-crossings (SILU, GELU).
        for kind in preset_kinds() {
            let alpha = kind.alpha().unwrap_or(1.0);
            let h = fmath::min(1e-5, 5e-4 / alpha);
            let mut worst = 0.0_f64;
            for i in 0..1000 {
                let x = -5.0 + 10.0 * i as f64 / 999.0;
                if !kind.is_smooth() && x.abs() < 1e-6 {
                    continue;
                }
                let fd = (kind.value(x + h) - kind.value(x - h)) / (2.0 * h);
                let analytic = kind.derivative(x);
                let denom = fmath::max(fd.abs(), 1e-300);
                let rel = if analytic == fd {
                    0.0
                } else {
                    (analytic - fd).abs() / denom
                };
                worst = fmath::max(worst, rel);
            }
            assert!(worst < 1e-7, "{kind}: max rel err {worst:.3e}");
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_difference_in_alpha() {
        for &(alpha, x) in &[(400.0, 1.0), (400.0, 0.3), (10.0, 2.0), (2.0, 0.05)] {
            let h = 1e-3;
            let up = ActivationKind::SmoothRelu { alpha: alpha + h }.value(x);
            let dn = ActivationKind::SmoothRelu { alpha: alpha - h }.value(x);
            let fd = (up - dn) / (2.0 * h);
            let analytic = smoothrelu_alpha_grad(alpha, x);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-300);
            assert!(rel < 1e-5, "alpha={alpha} x={x}: rel {rel:.3e}");
        }
        // Zero below and at zero input.
        assert_eq!(smoothrelu_alpha_grad(400.0, 0.0), 0.0);
        assert_eq!(smoothrelu_alpha_grad(400.0, -3.0), 0.0);
        // Frozen direct evaluation at (alpha=400, x=1).
        assert!((smoothrelu_alpha_grad(400.0, 1.0) - 3.122784495557878e-5).abs() < 1e-18);
    }

    #[test]
    fn alpha_gradient_via_fd_oracle_tensor_path() {
        // Same check through the public tensor op and the shared FD oracle.
        let xs = Tensor::vector(&[1.0]);
        let alpha = 400.0;
        let g = act_alpha_gradient(alpha, &xs).unwrap();
        let fd = finite_difference_grad(
            |a: &Tensor| {
                ActivationKind::SmoothRelu { alpha: a.item() }
                    .value(1.0)
            },
            &Tensor::scalar(alpha),
            1e-3,
        )
        .unwrap();
        let rel = (g.item() - fd.item()).abs() / fd.item().abs();
        assert!(rel < 1e-5, "rel {rel:.3e}");
    }

    #[test]
    fn smoothness_reports() {
        assert_eq!(smoothness_report(ActivationKind::Relu).jump, 1.0);
        assert_eq!(smoothness_report(ActivationKind::Elu { alpha: 2.0 }).jump, 1.0);
        assert_eq!(smoothness_report(ActivationKind::Elu { alpha: 1.0 }).jump, 0.0);
        for alpha in [1.0, 1.2, 1.4, 1.6, 1.8, 2.0] {
            assert_eq!(smoothness_report(ActivationKind::Celu { alpha }).jump, 0.0);
        }
        let r = smoothness_report(ActivationKind::SmoothRelu { alpha: 400.0 });
        assert_eq!(r.jump, 0.0);
        assert!(r.right_probe < 1e-5);
    }

    #[test]
    fn converges_to_relu_as_alpha_grows() {
        let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + 20.0 * i as f64 / 2000.0).collect();
        let mut last_psp = f64::INFINITY;
        let mut last_srelu = f64::INFINITY;
        for alpha in [1.0, 10.0, 100.0, 1000.0] {
            let psp = ActivationKind::ParametricSoftplus { alpha };
            let srelu = ActivationKind::SmoothRelu { alpha };
            let relu = ActivationKind::Relu;
            let d_psp = grid
                .iter()
                .map(|&x| (psp.value(x) - relu.value(x)).abs())
                .fold(0.0_f64, fmath::max);
            let d_srelu = grid
                .iter()
                .map(|&x| (srelu.value(x) - relu.value(x)).abs())
                .fold(0.0_f64, fmath::max);
            assert!(d_psp <= last_psp, "psoftplus gap grew at alpha={alpha}");
            assert!(d_srelu <= last_srelu, "smoothrelu gap grew at alpha={alpha}");
            // The softplus bound ln2/alpha is exact (max at x = 0).
            assert!((d_psp - core::f64::consts::LN_2 / alpha).abs() < 1e-12);
            last_psp = d_psp;
            last_srelu = d_srelu;
        }
        assert!(last_psp < 0.01);
        assert!(last_srelu < 0.01);
    }

    #[test]
    fn elu_and_celu_coincide_at_alpha_one() {
        let elu = ActivationKind::Elu { alpha: 1.0 };
        let celu = ActivationKind::Celu { alpha: 1.0 };
        for i in 0..=400 {
            let x = -4.0 + 8.0 * i as f64 / 400.0;
            assert_eq!(elu.value(x), celu.value(x), "value at {x}");
            assert_eq!(elu.derivative(x), celu.derivative(x), "derivative at {x}");
        }
    }

    #[test]
    fn changing_backward_never_changes_forward() {
        let mut rng = crate::rng::rng_from(11);
        let xs = Tensor::vector(
            &(0..64)
                .map(|_| crate::rng::uniform_in(&mut rng, -4.0, 4.0))
                .collect::<Vec<_>>(),
        );
        let a = act_forward(ActivationKind::Relu, &xs).unwrap();
        // Whatever lives in `backward` is irrelevant to act_forward.
        let pair = ActivationPair::new(
            ActivationKind::Relu,
            ActivationKind::ParametricSoftplus { alpha: 10.0 },
        );
        let b = act_forward(pair.forward, &xs).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn preset_kinds_cover_all_variants() {
        let kinds = preset_kinds();
        assert_eq!(kinds.len(), 4 + 3 + 12 + 5);
        for k in kinds {
            k.validate().unwrap();
        }
    }

    #[test]
    fn display_names() {
        assert_eq!(
            alloc::format!("{}", ActivationKind::Celu { alpha: 2.0 }),
            "celu(alpha=2)"
        );
        assert_eq!(alloc::format!("{}", ActivationKind::Silu), "silu");
    }

    #[test]
    fn smoothness_matches_probe_for_smooth_kinds() {
        for kind in preset_kinds() {
            let r = smoothness_report(kind);
            if kind.is_smooth() {
                assert_eq!(r.jump, 0.0, "{kind}");
                // The probe gap scales with the curvature at 0, i.e. with α.
                let bound = 1e-7 + 2e-8 * kind.alpha().unwrap_or(1.0);
                assert!(
                    (r.left_probe - r.right_probe).abs() < bound,
                    "{kind}: probes differ"
                );
            } else {
                assert!(r.jump > 0.0, "{kind}");
            }
        }
    }

    #[test]
    fn c1_jump_values_exact() {
        for alpha in [1.0_f64, 1.2, 1.4, 1.6, 1.8, 2.0] {
            let r = smoothness_report(ActivationKind::Elu { alpha });
            assert_eq!(r.jump, (alpha - 1.0).abs());
        }
        for kind in [
            ActivationKind::Softplus,
            ActivationKind::ParametricSoftplus { alpha: 10.0 },
            ActivationKind::Silu,
            ActivationKind::Gelu,
            ActivationKind::SmoothRelu { alpha: 400.0 },
        ] {
            assert_eq!(smoothness_report(kind).jump, 0.0);
        }
    }

}
