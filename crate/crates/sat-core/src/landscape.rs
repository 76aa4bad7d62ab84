//! Robustness sweeps and 2-D adversarial loss-landscape sampling.

use crate::attack::{self, AttackConfig, AttackError};
use crate::data::Dataset;
use crate::model::{self, ModelError, ModelParams, ModelSpec};
use crate::rng;
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Robust accuracy measured along one axis (attack iterations or ε).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: String,
    /// `(setting, robust_accuracy)` pairs; settings strictly increasing.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LandscapeError {
    /// Sweep settings must be strictly increasing.
    SettingsNotIncreasing,
    /// Grid size must be odd and at least 3 so (0, 0) sits on a cell.
    BadGridSize { n: usize },
    Attack(AttackError),
    Model(ModelError),
}

impl From<AttackError> for LandscapeError {
    fn from(e: AttackError) -> Self {
        LandscapeError::Attack(e)
    }
}

impl From<ModelError> for LandscapeError {
    fn from(e: ModelError) -> Self {
        LandscapeError::Model(e)
    }
}

impl fmt::Display for LandscapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LandscapeError::SettingsNotIncreasing => {
                write!(f, "sweep settings must be strictly increasing")
            }
            LandscapeError::BadGridSize { n } => {
                write!(f, "grid size must be odd and >= 3, got {n}")
            }
            LandscapeError::Attack(e) => write!(f, "{e}"),
            LandscapeError::Model(e) => write!(f, "{e}"),
        }
    }
}

fn check_increasing(values: &[f64]) -> Result<(), LandscapeError> {
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LandscapeError::SettingsNotIncreasing);
    }
    Ok(())
}

/// Robust accuracy at each attack iteration count `k`, shared ε, β = ε/4.
pub fn sweep_iterations(
    params: &ModelParams,
    spec: &ModelSpec,
    data: &Dataset,
    epsilon: f64,
    ks: &[usize],
    seed: u64,
) -> Result<SweepResult, LandscapeError> {
    check_increasing(&ks.iter().map(|&k| k as f64).collect::<Vec<_>>())?;
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let cfg = AttackConfig::new(epsilon, epsilon / 4.0, k.max(1));
        let acc = attack::robust_accuracy(params, spec, data, &cfg, seed)?;
        points.push((k as f64, acc));
    }
    Ok(SweepResult {
        axis: String::from("iterations"),
        points,
    })
}

/// Robust accuracy at each perturbation budget ε, fixed iteration count,
/// β = ε/4. ε = 0 reproduces clean accuracy exactly.
pub fn sweep_epsilon(
    params: &ModelParams,
    spec: &ModelSpec,
    data: &Dataset,
    eps_list: &[f64],
    k: usize,
    seed: u64,
) -> Result<SweepResult, LandscapeError> {
    check_increasing(eps_list)?;
    let mut points = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let cfg = AttackConfig::new(eps, eps / 4.0, k.max(1));
        let acc = attack::robust_accuracy(params, spec, data, &cfg, seed)?;
        points.push((eps, acc));
    }
    Ok(SweepResult {
        axis: String::from("epsilon"),
        points,
    })
}

/// Cross-entropy sampled over a 2-D slice of input space around one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    /// Odd grid size N; cell (i, j) corresponds to coefficients
    /// `(coefficients[i], coefficients[j])` and the center cell is (0, 0).
    pub n: usize,
    /// `linspace(−ε, ε, N)` shared by both axes.
    pub coefficients: Vec<f64>,
    /// Row-major N×N loss values; error cells hold NaN and are listed below.
    pub loss: Vec<f64>,
    /// Cells whose loss came out non-finite.
    pub error_cells: Vec<(usize, usize)>,
    pub epsilon: f64,
    pub seed: u64,
    /// First direction: sign of the clean-sample input gradient.
    pub d1_label: String,
    /// Second direction: seeded Rademacher vector.
    pub d2_label: String,
}

impl LandscapeGrid {
    pub fn loss_at(&self, i: usize, j: usize) -> f64 {
        self.loss[i * self.n + j]
    }

    /// Mean absolute discrete Laplacian over interior cells; the crate's
    /// measurable proxy for visual landscape smoothness.
    pub fn mean_abs_laplacian(&self) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let lap = 4.0 * self.loss_at(i, j)
                    - self.loss_at(i - 1, j)
                    - self.loss_at(i + 1, j)
                    - self.loss_at(i, j - 1)
                    - self.loss_at(i, j + 1);
                total += crate::fmath::abs(lap);
                count += 1;
            }
        }
        total / count as f64
    }
}

/// Sample the adversarial loss surface around one labeled sample.
///
/// `d1` is the gradient-sign direction at the clean sample, `d2` a Rademacher
/// vector drawn from the seed; the cell (a, b) holds the cross-entropy at
/// `clip_[0,1](x + a·d1 + b·d2)`.
pub fn loss_landscape(
    params: &ModelParams,
    spec: &ModelSpec,
    sample: &Tensor,
    label: usize,
    epsilon: f64,
    n: usize,
    seed: u64,
) -> Result<LandscapeGrid, LandscapeError> {
    if n < 3 || n % 2 == 0 {
        return Err(LandscapeError::BadGridSize { n });
    }
    // d1: attack direction at the clean sample.
    let (pass, loss) = model::loss_forward(params, spec, sample, &[label], spec.activation)?;
    let grads = pass
        .graph
        .backward(loss)
        .map_err(|e| LandscapeError::Model(ModelError::Graph(e)))?;
    let d1 = grads.get(pass.input).sign();
    // d2: Rademacher from the run seed.
    let mut rng = rng::rng_from(rng::derive_seed(seed, rng::stream::LANDSCAPE, 0));
    let d2 = sample.map(|_| rng::rademacher(&mut rng));

    let coefficients: Vec<f64> = (0..n)
        .map(|i| -epsilon + 2.0 * epsilon * i as f64 / (n - 1) as f64)
        .collect();
    let mut grid = LandscapeGrid {
        n,
        coefficients: coefficients.clone(),
        loss: alloc::vec![0.0; n * n],
        error_cells: Vec::new(),
        epsilon,
        seed,
        d1_label: String::from("grad-sign"),
        d2_label: String::from("rademacher"),
    };
    for (i, &a) in coefficients.iter().enumerate() {
        for (j, &b) in coefficients.iter().enumerate() {
            let x = if a == 0.0 && b == 0.0 {
                sample.clone()
            } else {
                sample
                    .add_scaled(&d1, a)
                    .unwrap()
                    .add_scaled(&d2, b)
                    .unwrap()
                    .clamp(0.0, 1.0)
            };
            let (pass, loss) = model::loss_forward(params, spec, &x, &[label], spec.activation)?;
            let value = pass.graph.value(loss).item();
            if value.is_finite() {
                grid.loss[i * n + j] = value;
            } else {
                grid.loss[i * n + j] = f64::NAN;
                grid.error_cells.push((i, j));
            }
        }
    }
    Ok(grid)
}
