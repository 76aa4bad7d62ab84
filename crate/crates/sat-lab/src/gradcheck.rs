//! Analytic-derivative verification: every activation kind against the
//! central-difference oracle, the SmoothReLU alpha gradient, the C¹ jump
//! table, and end-to-end network gradients.

use sat_core::activations::{
    act_alpha_gradient, preset_kinds, smoothness_report, ActivationKind, ActivationPair,
};
use sat_core::graph::{finite_difference_grad, relative_l2_error};
use sat_core::model::{self, LayerSpec, ModelSpec};
use sat_core::rng;
use sat_core::Tensor;
use std::fmt::Write as _;

/// Tolerance for the pointwise activation-derivative grid.
pub const GRID_TOLERANCE: f64 = 1e-7;
/// Tolerance for whole-network gradient checks (relative L2 per tensor).
pub const NETWORK_TOLERANCE: f64 = 1e-5;
/// Tolerance for the SmoothReLU ∂f/∂α check.
pub const ALPHA_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct KindCheck {
    pub kind: ActivationKind,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl KindCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct JumpRow {
    pub kind: ActivationKind,
    pub jump: f64,
    pub expected: f64,
}

impl JumpRow {
    pub fn passed(&self) -> bool {
        self.jump == self.expected
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub grid: Vec<KindCheck>,
    pub alpha: Vec<KindCheck>,
    pub jumps: Vec<JumpRow>,
    pub network: Vec<KindCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.grid.iter().all(KindCheck::passed)
            && self.alpha.iter().all(KindCheck::passed)
            && self.jumps.iter().all(JumpRow::passed)
            && self.network.iter().all(KindCheck::passed)
    }

    /// Worst failing check, for the error message contract.
    pub fn worst_failure(&self) -> Option<String> {
        let mut worst: Option<(f64, String)> = None;
        let mut consider = |err: f64, label: String| {
            if worst.as_ref().is_none_or(|(w, _)| err > *w) {
                worst = Some((err, label));
            }
        };
        for c in self.grid.iter().chain(&self.alpha).chain(&self.network) {
            if !c.passed() {
                consider(
                    c.max_rel_err,
                    format!("{}: max rel err {:.3e}", c.kind, c.max_rel_err),
                );
            }
        }
        for j in &self.jumps {
            if !j.passed() {
                consider(
                    (j.jump - j.expected).abs(),
                    format!("{}: jump {} != expected {}", j.kind, j.jump, j.expected),
                );
            }
        }
        worst.map(|(_, label)| label)
    }

    /// Human-readable table (one line per check).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("derivative grid (1000 points in [-5, 5]):\n");
        for c in &self.grid {
            writeln!(
                out,
                "  {:<24} max rel err {:>10.3e}  [{}]",
                c.kind.to_string(),
                c.max_rel_err,
                if c.passed() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        out.push_str("smoothrelu alpha gradient vs FD-in-alpha:\n");
        for c in &self.alpha {
            writeln!(
                out,
                "  {:<24} max rel err {:>10.3e}  [{}]",
                c.kind.to_string(),
                c.max_rel_err,
                if c.passed() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        out.push_str("derivative jump at 0:\n");
        for j in &self.jumps {
            writeln!(
                out,
                "  {:<24} jump {:<22} expected {:<22} [{}]",
                j.kind.to_string(),
                j.jump,
                j.expected,
                if j.passed() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        out.push_str("network gradients vs FD (MLP, params + input):\n");
        for c in &self.network {
            writeln!(
                out,
                "  {:<24} max rel err {:>10.3e}  [{}]",
                c.kind.to_string(),
                c.max_rel_err,
                if c.passed() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        out
    }
}

/// FD step for the pointwise grid: curvature grows with alpha, so the step
/// shrinks to keep truncation under the tolerance.
pub fn grid_step(kind: ActivationKind) -> f64 {
    let alpha = kind.alpha().unwrap_or(1.0);
    (5e-4 / alpha).min(1e-5)
}

/// FD step for network probes. Weight-space curvature grows with alpha, so
/// those steps shrink; the alpha direction itself is nearly flat (loss varies
/// on the 1/α² scale), so its step grows with alpha to keep the difference
/// above roundoff.
pub fn network_step(kind: ActivationKind, param_name: Option<&str>) -> f64 {
    let alpha = kind.alpha().unwrap_or(1.0);
    match param_name {
        Some(name) if model::is_alpha_param(name) => 1e-3 * alpha.max(1.0),
        _ => (4e-4 / alpha).min(1e-5),
    }
}

/// Max pointwise relative error between the analytic derivative and central
/// differences over a 1000-point grid in [−5, 5]. Non-smooth kinds skip the
/// immediate neighborhood of the kink (|x| < 1e-6).
pub fn grid_check(kind: ActivationKind, fault: f64) -> KindCheck {
    let h = grid_step(kind);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let x = -5.0 + 10.0 * i as f64 / 999.0;
        if !kind.is_smooth() && x.abs() < 1e-6 {
            continue;
        }
        let fd = (kind.value(x + h) - kind.value(x - h)) / (2.0 * h);
        let mut analytic = kind.derivative(x);
        if kind == ActivationKind::Softplus {
            analytic += fault;
        }
        let rel = if analytic == fd {
            0.0
        } else {
            (analytic - fd).abs() / fd.abs().max(1e-300)
        };
        worst = worst.max(rel);
    }
    KindCheck {
        kind,
        max_rel_err: worst,
        tolerance: GRID_TOLERANCE,
    }
}

fn alpha_check(alpha: f64) -> KindCheck {
    let kind = ActivationKind::SmoothRelu { alpha };
    let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.02).collect();
    let x = Tensor::vector(&xs);
    let analytic = act_alpha_gradient(alpha, &x).unwrap();
    let h = 1e-3;
    let mut worst = 0.0_f64;
    for (i, &xv) in xs.iter().enumerate() {
        let up = ActivationKind::SmoothRelu { alpha: alpha + h }.value(xv);
        let dn = ActivationKind::SmoothRelu { alpha: alpha - h }.value(xv);
        let fd = (up - dn) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = if a == fd {
            0.0
        } else {
            (a - fd).abs() / fd.abs().max(1e-12)
        };
        worst = worst.max(rel);
    }
    KindCheck {
        kind,
        max_rel_err: worst,
        tolerance: ALPHA_TOLERANCE,
    }
}

fn expected_jump(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Relu => 1.0,
        ActivationKind::Elu { alpha } => (alpha - 1.0).abs(),
        _ => 0.0,
    }
}

/// End-to-end gradient check for a small MLP with the given activation:
/// every parameter plus the input against FD, relative L2 per tensor.
pub fn network_check(kind: ActivationKind) -> KindCheck {
    let pair = ActivationPair::symmetric(kind);
    let spec = ModelSpec {
        layers: vec![
            LayerSpec::Dense { input: 6, output: 8 },
            LayerSpec::Dense { input: 8, output: 4 },
        ],
        activation: pair,
        input_shape: vec![6],
        class_count: 4,
    };
    let params = model::init_params(&spec, 0xBEEF).unwrap();
    let mut r = rng::rng_from(0xF00D);
    let x = Tensor::new(
        vec![2, 6],
        (0..12).map(|_| rng::uniform_in(&mut r, -1.0, 1.0)).collect(),
    )
    .unwrap();
    let labels = [1usize, 3];

    let (pass, loss) = model::loss_forward(&params, &spec, &x, &labels, pair).unwrap();
    let grads = pass.graph.backward(loss).unwrap();
    let mut worst = 0.0_f64;
    for name in params.names() {
        let analytic = grads.get(pass.param_nodes[name]);
        let fd = finite_difference_grad(
            |probe: &Tensor| {
                let mut p2 = params.clone();
                *p2.get_mut(name).unwrap() = probe.clone();
                let (pass, loss) = model::loss_forward(&p2, &spec, &x, &labels, pair).unwrap();
                pass.graph.value(loss).item()
            },
            params.get(name).unwrap(),
            network_step(kind, Some(name)),
        )
        .unwrap();
        worst = worst.max(relative_l2_error(analytic, &fd));
    }
    let fd_x = finite_difference_grad(
        |probe: &Tensor| {
            let (pass, loss) = model::loss_forward(&params, &spec, probe, &labels, pair).unwrap();
            pass.graph.value(loss).item()
        },
        &x,
        network_step(kind, None),
    )
    .unwrap();
    worst = worst.max(relative_l2_error(grads.get(pass.input), &fd_x));
    KindCheck {
        kind,
        max_rel_err: worst,
        tolerance: NETWORK_TOLERANCE,
    }
}

/// Run the whole verification suite. `inject_fault` perturbs one analytic
/// derivative so the failure path itself can be exercised.
pub fn run(inject_fault: bool) -> GradcheckReport {
    let fault = if inject_fault { 1e-3 } else { 0.0 };
    let kinds = preset_kinds();
    let grid = kinds.iter().map(|&k| grid_check(k, fault)).collect();
    let alpha = [1.0, 10.0, 100.0, 400.0, 1000.0]
        .into_iter()
        .map(alpha_check)
        .collect();
    let jumps = kinds
        .iter()
        .map(|&k| JumpRow {
            kind: k,
            jump: smoothness_report(k).jump,
            expected: expected_jump(k),
        })
        .collect();
    let network = [
        ActivationKind::Softplus,
        ActivationKind::ParametricSoftplus { alpha: 10.0 },
        ActivationKind::Silu,
        ActivationKind::Gelu,
        ActivationKind::Elu { alpha: 1.0 },
        ActivationKind::Celu { alpha: 1.5 },
        ActivationKind::SmoothRelu { alpha: 400.0 },
    ]
    .into_iter()
    .map(network_check)
    .collect();
    GradcheckReport {
        grid,
        alpha,
        jumps,
        network,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let report = run(false);
        assert!(report.passed(), "{}", report.render());
        assert!(report.worst_failure().is_none());
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = run(true);
        assert!(!report.passed());
        let failure = report.worst_failure().unwrap();
        assert!(failure.contains("softplus"), "failure was: {failure}");
    }

    #[test]
    fn jump_table_matches_expected_values() {
        let report = run(false);
        for row in &report.jumps {
            match row.kind {
                ActivationKind::Relu => assert_eq!(row.jump, 1.0),
                ActivationKind::Elu { alpha } => assert_eq!(row.jump, (alpha - 1.0).abs()),
                _ => assert_eq!(row.jump, 0.0, "{}", row.kind),
            }
        }
    }
}
