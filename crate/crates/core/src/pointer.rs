//! Gaussian-pointer weak measurements, simulated exactly on a grid.
//!
//! The system and one or two meters share a dense amplitude array. Each
//! impulsive coupling `exp(-i g A ⊗ p)` is applied without truncation: in
//! the meter's wave-number representation it is the system operator
//! `Σ_λ e^{-i g k λ} P_λ` at every grid wave number `k`. After
//! post-selection the meter moments are compared with the weak values they
//! are supposed to encode. Units have `ħ = 1`, so `p = k`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histories::{HistoryError, SegmentedEvolution};
use crate::linalg::{spectral_decompose, LinalgError, Operator, StateVector};
use crate::weakvalues::{sequential_weak_value, weak_value, TimedOperator, WeakValueError};

/// Largest joint amplitude array, in complex entries.
pub const MAX_JOINT_ENTRIES: usize = 1 << 25;
/// Post-selection probabilities below this are treated as impossible.
pub const MIN_POSTSELECTION_PROBABILITY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PointerError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    WeakValue(#[from] WeakValueError),
    #[error("grid too coarse: sigma spans {cells:.2} cells, need at least 8")]
    GridTooCoarse { cells: f64 },
    #[error("invalid meter grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error("pointer shift {shift} exceeds a quarter of the half-width ({limit})")]
    ShiftTooLarge { shift: f64, limit: f64 },
    #[error("meter index {index} out of range for {count} meters")]
    MeterIndex { index: usize, count: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("post-selection impossible (probability {probability:e})")]
    PostSelectionImpossible { probability: f64 },
    #[error("joint state with {0} entries is too large")]
    TooLarge(usize),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

pub type Result<T> = std::result::Result<T, PointerError>;

/// Real Gaussian pointer `φ(x) ∝ exp(-x²/4σ²)` sampled on `M` points
/// spanning `[-L, L)`. `sigma` is the standard deviation of `|φ|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeter {
    sigma: f64,
    grid_points: usize,
    half_width: f64,
}

impl GaussianMeter {
    pub fn new(sigma: f64, grid_points: usize, half_width: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PointerError::InvalidGrid(format!("sigma must be positive, got {sigma}")));
        }
        if !half_width.is_finite() || half_width < 8.0 * sigma {
            return Err(PointerError::InvalidGrid(format!(
                "half-width {half_width} must be at least 8 sigma ({})",
                8.0 * sigma
            )));
        }
        if grid_points < 256 || !grid_points.is_power_of_two() {
            return Err(PointerError::InvalidGrid(format!(
                "grid points must be a power of two and at least 256, got {grid_points}"
            )));
        }
        let cells = sigma / (2.0 * half_width / grid_points as f64);
        if cells < 8.0 {
            return Err(PointerError::GridTooCoarse { cells });
        }
        Ok(Self { sigma, grid_points, half_width })
    }

    /// `M = 1024`, `L = 16σ`.
    pub fn with_defaults(sigma: f64) -> Result<Self> {
        Self::new(sigma, 1024, 16.0 * sigma)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn grid_points(&self) -> usize {
        self.grid_points
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.grid_points as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.grid_points).map(|j| -self.half_width + j as f64 * dx).collect()
    }

    /// Wave numbers in FFT output order: `0, dk, …, -dk` with `dk = π/L`.
    pub fn wave_numbers(&self) -> Vec<f64> {
        let m = self.grid_points as i64;
        let dk = PI / self.half_width;
        (0..m).map(|j| if j < m / 2 { j as f64 * dk } else { (j - m) as f64 * dk }).collect()
    }

    /// Samples `φ`, renormalized so that `Σ|φ|² dx = 1`.
    pub fn initial_wavefunction(&self) -> Vec<C64> {
        let s2 = self.sigma * self.sigma;
        let pref = (2.0 * PI * s2).powf(-0.25);
        let mut psi: Vec<C64> =
            self.positions().iter().map(|&x| C64::new(pref * (-x * x / (4.0 * s2)).exp(), 0.0)).collect();
        let norm = (psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dx()).sqrt();
        for z in &mut psi {
            *z /= norm;
        }
        psi
    }
}

/// Meter wavefunction(s) after post-selection, or any free meter state.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterState {
    meter: GaussianMeter,
    meter_count: usize,
    amplitudes: Vec<C64>,
}

impl MeterState {
    /// Wraps samples on the meter grid; `amplitudes.len()` must be `M^count`.
    pub fn new(meter: GaussianMeter, meter_count: usize, amplitudes: Vec<C64>) -> Result<Self> {
        let expected = meter_entries(&meter, meter_count)?;
        if amplitudes.len() != expected {
            return Err(PointerError::DimensionMismatch { expected, found: amplitudes.len() });
        }
        Ok(Self { meter, meter_count, amplitudes })
    }

    pub fn meter(&self) -> &GaussianMeter {
        &self.meter
    }

    pub fn meter_count(&self) -> usize {
        self.meter_count
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        (self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.meter.dx().powi(self.meter_count as i32))
            .sqrt()
    }
}

fn meter_entries(meter: &GaussianMeter, count: usize) -> Result<usize> {
    if count == 0 {
        return Err(PointerError::InvalidGrid("at least one meter is required".into()));
    }
    let mut total: usize = 1;
    for _ in 0..count {
        total = total
            .checked_mul(meter.grid_points)
            .filter(|&t| t <= MAX_JOINT_ENTRIES)
            .ok_or(PointerError::TooLarge(usize::MAX))?;
    }
    Ok(total)
}

/// The initial single-meter wavefunction.
pub fn initial_meter(meter: &GaussianMeter) -> MeterState {
    MeterState { meter: *meter, meter_count: 1, amplitudes: meter.initial_wavefunction() }
}

/// System ⊗ meters amplitudes, system index slowest, meter 0 next.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    system_dim: usize,
    meter: GaussianMeter,
    meter_count: usize,
    amplitudes: Vec<C64>,
}

/// One impulsive interaction `exp(-i g A ⊗ p)` on a chosen meter.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub g: f64,
    pub observable: Operator,
    pub meter_index: usize,
    pub at: usize,
}

impl JointState {
    /// `|ψ⟩ ⊗ |φ⟩^{⊗count}`.
    pub fn product(system: &StateVector, meter: &GaussianMeter, meter_count: usize) -> Result<Self> {
        let per_system = meter_entries(meter, meter_count)?;
        let total = per_system
            .checked_mul(system.dim())
            .filter(|&t| t <= MAX_JOINT_ENTRIES)
            .ok_or(PointerError::TooLarge(per_system.saturating_mul(system.dim())))?;
        let phi = meter.initial_wavefunction();
        let mut meters = vec![C64::new(1.0, 0.0)];
        for _ in 0..meter_count {
            meters = meters.iter().flat_map(|&a| phi.iter().map(move |&b| a * b)).collect();
        }
        let mut amplitudes = Vec::with_capacity(total);
        for &c in system.entries() {
            amplitudes.extend(meters.iter().map(|&m| c * m));
        }
        Ok(Self { system_dim: system.dim(), meter: *meter, meter_count, amplitudes })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn meter_count(&self) -> usize {
        self.meter_count
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    fn per_system(&self) -> usize {
        self.amplitudes.len() / self.system_dim
    }

    pub fn norm(&self) -> f64 {
        (self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.meter.dx().powi(self.meter_count as i32))
            .sqrt()
    }

    /// Applies a system operator at every meter configuration.
    pub fn apply_system(&mut self, u: &Operator) -> Result<()> {
        if u.dim() != self.system_dim {
            return Err(PointerError::DimensionMismatch { expected: self.system_dim, found: u.dim() });
        }
        let stride = self.per_system();
        let n = self.system_dim;
        let mut column = vec![C64::new(0.0, 0.0); n];
        for r in 0..stride {
            for (s, c) in column.iter_mut().enumerate() {
                *c = self.amplitudes[s * stride + r];
            }
            for s in 0..n {
                self.amplitudes[s * stride + r] = (0..n).map(|t| u.get(s, t) * column[t]).sum();
            }
        }
        Ok(())
    }
}

/// Runs `f` on every line of `data` along meter `axis`, where `data` holds
/// `blocks` consecutive blocks of `M^count` meter amplitudes.
fn for_each_line(
    data: &mut [C64],
    grid_points: usize,
    meter_count: usize,
    axis: usize,
    mut f: impl FnMut(&mut [C64]),
) {
    let block = grid_points.pow(meter_count as u32);
    let stride = grid_points.pow((meter_count - 1 - axis) as u32);
    let outer = block / (stride * grid_points);
    let mut line = vec![C64::new(0.0, 0.0); grid_points];
    for b in data.chunks_mut(block) {
        for o in 0..outer {
            for i in 0..stride {
                let base = o * stride * grid_points + i;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = b[base + j * stride];
                }
                f(&mut line);
                for (j, v) in line.iter().enumerate() {
                    b[base + j * stride] = *v;
                }
            }
        }
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(m), inverse: planner.plan_fft_inverse(m) }
    }
}

/// Applies `exp(-i g A ⊗ p)` exactly to the addressed meter.
pub fn evolve_impulsive(js: &JointState, c: &CouplingSpec) -> Result<JointState> {
    if c.meter_index >= js.meter_count {
        return Err(PointerError::MeterIndex { index: c.meter_index, count: js.meter_count });
    }
    if c.observable.dim() != js.system_dim {
        return Err(PointerError::DimensionMismatch { expected: js.system_dim, found: c.observable.dim() });
    }
    if !c.g.is_finite() || c.g < 0.0 {
        return Err(PointerError::InvalidCoupling(format!("g must be non-negative, got {}", c.g)));
    }
    let spectrum = spectral_decompose(&c.observable)?;
    if c.g == 0.0 {
        return Ok(js.clone());
    }
    let shift = c.g * spectrum.max_abs_eigenvalue();
    let limit = js.meter.half_width / 4.0;
    if shift > limit {
        return Err(PointerError::ShiftTooLarge { shift, limit });
    }

    let m = js.meter.grid_points;
    let fft = FftPair::new(m);
    let mut out = js.clone();
    for_each_line(&mut out.amplitudes, m, js.meter_count, c.meter_index, |line| fft.forward.process(line));

    // Per wave number, the system operator Σ_λ e^{-i g k λ} P_λ.
    let kicks: Vec<Operator> = js
        .meter
        .wave_numbers()
        .iter()
        .map(|&k| spectrum.map(|lambda| C64::from_polar(1.0, -c.g * k * lambda)))
        .collect();

    let n = js.system_dim;
    let per_system = js.per_system();
    let stride = m.pow((js.meter_count - 1 - c.meter_index) as u32);
    let mut column = vec![C64::new(0.0, 0.0); n];
    for r in 0..per_system {
        let kick = &kicks[(r / stride) % m];
        for (s, v) in column.iter_mut().enumerate() {
            *v = out.amplitudes[s * per_system + r];
        }
        for s in 0..n {
            out.amplitudes[s * per_system + r] = (0..n).map(|t| kick.get(s, t) * column[t]).sum();
        }
    }

    let scale = 1.0 / m as f64;
    for_each_line(&mut out.amplitudes, m, js.meter_count, c.meter_index, |line| {
        fft.inverse.process(line);
        for v in line.iter_mut() {
            *v *= scale;
        }
    });
    Ok(out)
}

/// Projects the system onto `post` and renormalizes the meters. Returns the
/// meter state and the success probability.
pub fn postselect(js: &JointState, post: &StateVector) -> Result<(MeterState, f64)> {
    if post.dim() != js.system_dim {
        return Err(PointerError::DimensionMismatch { expected: js.system_dim, found: post.dim() });
    }
    let per_system = js.per_system();
    let mut meter = vec![C64::new(0.0, 0.0); per_system];
    for (s, f) in post.entries().iter().enumerate() {
        let bra = f.conj();
        for (acc, a) in meter.iter_mut().zip(&js.amplitudes[s * per_system..(s + 1) * per_system]) {
            *acc += bra * a;
        }
    }
    let probability =
        meter.iter().map(|z| z.norm_sqr()).sum::<f64>() * js.meter.dx().powi(js.meter_count as i32);
    if !(probability >= MIN_POSTSELECTION_PROBABILITY) {
        return Err(PointerError::PostSelectionImpossible { probability });
    }
    let norm = probability.sqrt();
    for z in &mut meter {
        *z /= norm;
    }
    Ok((MeterState { meter: js.meter, meter_count: js.meter_count, amplitudes: meter }, probability))
}

/// Raw two-meter moments `⟨x₁x₂⟩, ⟨k₁k₂⟩, ⟨x₁k₂⟩, ⟨k₁x₂⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlators {
    pub xx: f64,
    pub kk: f64,
    pub xk: f64,
    pub kx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeterMoments {
    pub mean_x: Vec<f64>,
    pub mean_k: Vec<f64>,
    /// Present when exactly two meters are attached.
    pub correlators: Option<Correlators>,
}

/// Position and wave-number moments of a meter state, by quadrature on the
/// grid and on its discrete Fourier transform.
pub fn meter_moments(state: &MeterState) -> MeterMoments {
    let meter = &state.meter;
    let m = meter.grid_points;
    let count = state.meter_count;
    let xs = meter.positions();
    let ks = meter.wave_numbers();
    let fft = FftPair::new(m);

    let transformed = |axes: &[usize]| -> Vec<f64> {
        let mut data = state.amplitudes.clone();
        for &axis in axes {
            for_each_line(&mut data, m, count, axis, |line| fft.forward.process(line));
        }
        let total: f64 = data.iter().map(|z| z.norm_sqr()).sum();
        data.iter().map(|z| z.norm_sqr() / total).collect()
    };
    // Coordinate of flat index `r` along `axis`.
    let coord = |r: usize, axis: usize| (r / m.pow((count - 1 - axis) as u32)) % m;

    let position_density = transformed(&[]);
    let mean_x = (0..count)
        .map(|axis| position_density.iter().enumerate().map(|(r, p)| p * xs[coord(r, axis)]).sum())
        .collect();
    let mean_k = (0..count)
        .map(|axis| transformed(&[axis]).iter().enumerate().map(|(r, p)| p * ks[coord(r, axis)]).sum())
        .collect();

    let correlators = (count == 2).then(|| {
        let pair = |density: &[f64], first: &[f64], second: &[f64]| -> f64 {
            density.iter().enumerate().map(|(r, p)| p * first[coord(r, 0)] * second[coord(r, 1)]).sum()
        };
        Correlators {
            xx: pair(&position_density, &xs, &xs),
            kk: pair(&transformed(&[0, 1]), &ks, &ks),
            xk: pair(&transformed(&[1]), &xs, &ks),
            kx: pair(&transformed(&[0]), &ks, &xs),
        }
    });
    MeterMoments { mean_x, mean_k, correlators }
}

/// `⟨x⟩/g + 2iσ²⟨k⟩/g` for one meter.
pub fn extract_single_wv(moments: &MeterMoments, meter_index: usize, g: f64, sigma: f64) -> C64 {
    C64::new(moments.mean_x[meter_index] / g, 2.0 * sigma * sigma * moments.mean_k[meter_index] / g)
}

/// Closed-form two-meter correlators to second order in `g`, given the two
/// single-time weak values and the sequential one.
pub fn predicted_correlators(a1: C64, a2: C64, seq: C64, g: f64, sigma: f64) -> Correlators {
    let g2 = g * g;
    let s2 = sigma * sigma;
    let cross = a1.conj() * a2;
    let mixed = a1 * a2.conj();
    Correlators {
        xx: g2 / 2.0 * (seq + cross).re,
        kk: g2 / (8.0 * s2 * s2) * (-seq + cross).re,
        xk: g2 / (4.0 * s2) * (seq - mixed).im,
        kx: g2 / (4.0 * s2) * (seq + mixed).im,
    }
}

/// Sequential weak value recovered from each correlator separately, after
/// subtracting the single-time product term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubtractionEstimate {
    pub re_from_xx: f64,
    pub re_from_kk: f64,
    pub im_from_xk: f64,
    pub im_from_kx: f64,
}

impl SubtractionEstimate {
    /// Averages the two real-part and the two imaginary-part estimates.
    pub fn combined(&self) -> C64 {
        C64::new((self.re_from_xx + self.re_from_kk) / 2.0, (self.im_from_xk + self.im_from_kx) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequentialEstimate {
    /// `(⟨x₁x₂⟩ - 4σ⁴⟨k₁k₂⟩)/g² + i·2σ²(⟨x₁k₂⟩ + ⟨k₁x₂⟩)/g²`.
    pub correlator_difference: C64,
    pub subtraction: SubtractionEstimate,
}

pub fn extract_sequential_wv(
    correlators: &Correlators,
    a1: C64,
    a2: C64,
    g: f64,
    sigma: f64,
) -> SequentialEstimate {
    let g2 = g * g;
    let s2 = sigma * sigma;
    let cross = a1.conj() * a2;
    let mixed = a1 * a2.conj();
    let correlator_difference = C64::new(
        (correlators.xx - 4.0 * s2 * s2 * correlators.kk) / g2,
        2.0 * s2 * (correlators.xk + correlators.kx) / g2,
    );
    let subtraction = SubtractionEstimate {
        re_from_xx: 2.0 * correlators.xx / g2 - cross.re,
        re_from_kk: cross.re - 8.0 * s2 * s2 * correlators.kk / g2,
        im_from_xk: 4.0 * s2 * correlators.xk / g2 + mixed.im,
        im_from_kx: 4.0 * s2 * correlators.kx / g2 - mixed.im,
    };
    SequentialEstimate { correlator_difference, subtraction }
}

/// Pre/post-selected system with one or two observables, each weakly
/// coupled to its own meter at its own time.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerInstance {
    pub pre: StateVector,
    pub post: StateVector,
    pub evolution: SegmentedEvolution,
    pub observables: Vec<TimedOperator>,
}

impl PointerInstance {
    pub fn new(
        pre: StateVector,
        post: StateVector,
        evolution: SegmentedEvolution,
        observables: Vec<TimedOperator>,
    ) -> Result<Self> {
        if observables.is_empty() || observables.len() > 2 {
            return Err(PointerError::InvalidInstance(format!(
                "need one or two observables, got {}",
                observables.len()
            )));
        }
        for o in &observables {
            let dev = o.op.hermiticity_deviation();
            if dev >= crate::linalg::TAU_OP {
                return Err(LinalgError::NotHermitian { max_dev: dev }.into());
            }
        }
        // Validates time order and dimensions.
        crate::weakvalues::sequential_numerator(&observables, &pre, &post, &evolution)?;
        Ok(Self { pre, post, evolution, observables })
    }

    pub fn meter_count(&self) -> usize {
        self.observables.len()
    }

    /// Single-time weak value of each observable.
    pub fn single_weak_values(&self) -> Result<Vec<C64>> {
        self.observables
            .iter()
            .map(|o| Ok(weak_value(&o.op, &self.pre, &self.post, &self.evolution, o.at)?.value))
            .collect()
    }

    /// Sequential weak value of all observables in time order.
    pub fn sequential_weak_value(&self) -> Result<C64> {
        Ok(sequential_weak_value(&self.observables, &self.pre, &self.post, &self.evolution)?.value)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| PointerError::InvalidInstance(e.to_string()))?;
        file.into_instance()
    }
}

/// Result of one exact pointer simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerRun {
    pub g: f64,
    pub moments: MeterMoments,
    pub success_probability: f64,
}

/// Evolves system and meters through every coupling, post-selects, and
/// returns the meter moments.
pub fn simulate(instance: &PointerInstance, meter: &GaussianMeter, g: f64) -> Result<PointerRun> {
    let mut js = JointState::product(&instance.pre, meter, instance.meter_count())?;
    let mut now = 0;
    for (index, o) in instance.observables.iter().enumerate() {
        js.apply_system(&instance.evolution.between(now, o.at)?)?;
        let coupling = CouplingSpec { g, observable: o.op.clone(), meter_index: index, at: o.at };
        js = evolve_impulsive(&js, &coupling)?;
        now = o.at;
    }
    js.apply_system(&instance.evolution.between(now, instance.evolution.grid().final_ordinal())?)?;
    let (state, success_probability) = postselect(&js, &instance.post)?;
    Ok(PointerRun { g, moments: meter_moments(&state), success_probability })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub g: f64,
    /// Weak-value estimate of the first meter.
    pub estimate: C64,
    /// `|(⟨x⟩ + 2iσ²⟨k⟩) - g A_w|` for the first meter.
    pub shift_residual: f64,
    pub shift_residual_x: f64,
    pub shift_residual_k: f64,
    /// Two-meter runs only: `⟨x₁x₂⟩/g²` and its closed-form limit.
    pub xx_over_g2: Option<f64>,
    pub xx_limit: Option<f64>,
    pub sequential: Option<SequentialEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub weak_value: C64,
    pub sequential_weak_value: Option<C64>,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(shift_residual_x)` against `ln g`.
    pub residual_slope: Option<f64>,
    /// Least-squares slope of `ln|⟨x₁x₂⟩|` against `ln g` (two meters).
    pub correlator_slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive `y`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Simulates the instance at each coupling strength and tabulates how the
/// pointer shifts deviate from their leading-order weak-value predictions.
/// Rows are reported in descending `g`.
pub fn scaling_study(instance: &PointerInstance, meter: &GaussianMeter, gs: &[f64]) -> Result<ScalingStudy> {
    for &g in gs {
        if !(g > 0.0 && g <= 0.3) {
            return Err(PointerError::InvalidCoupling(format!("scaling g values must lie in (0, 0.3], got {g}")));
        }
    }
    let mut gs = gs.to_vec();
    gs.sort_by(|a, b| b.total_cmp(a));
    gs.dedup();

    let singles = instance.single_weak_values()?;
    let a_w = singles[0];
    let seq = if instance.meter_count() == 2 { Some(instance.sequential_weak_value()?) } else { None };
    let sigma = meter.sigma();
    let s2 = sigma * sigma;

    let mut rows = Vec::with_capacity(gs.len());
    for &g in &gs {
        let run = simulate(instance, meter, g)?;
        let mx = run.moments.mean_x[0];
        let mk = run.moments.mean_k[0];
        let shift = C64::new(mx, 2.0 * s2 * mk);
        let (xx_over_g2, xx_limit, sequential) = match (seq, run.moments.correlators) {
            (Some(s), Some(c)) => (
                Some(c.xx / (g * g)),
                Some(0.5 * (s + singles[0].conj() * singles[1]).re),
                Some(extract_sequential_wv(&c, singles[0], singles[1], g, sigma)),
            ),
            _ => (None, None, None),
        };
        rows.push(ScalingRow {
            g,
            estimate: extract_single_wv(&run.moments, 0, g, sigma),
            shift_residual: (shift - a_w * g).norm(),
            shift_residual_x: (mx - g * a_w.re).abs(),
            shift_residual_k: (mk - g * a_w.im / (2.0 * s2)).abs(),
            xx_over_g2,
            xx_limit,
            sequential,
        });
    }
    let residual_slope = log_log_slope(&rows.iter().map(|r| (r.g, r.shift_residual_x)).collect::<Vec<_>>());
    let correlator_slope = if seq.is_some() {
        log_log_slope(&rows.iter().map(|r| (r.g, r.xx_over_g2.unwrap_or(0.0).abs() * r.g * r.g)).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(ScalingStudy { weak_value: a_w, sequential_weak_value: seq, rows, residual_slope, correlator_slope })
}

/// JSON description of a pointer instance. Complex numbers are `[re, im]`
/// pairs; matrices are lists of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub pre: Vec<[f64; 2]>,
    pub post: Vec<[f64; 2]>,
    /// Evolution segments; omitted means identity segments.
    #[serde(default)]
    pub segments: Option<Vec<Vec<Vec<[f64; 2]>>>>,
    pub observables: Vec<ObservableEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservableEntry {
    pub at: usize,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

fn to_c64(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|p| C64::new(p[0], p[1])).collect()
}

fn to_operator(rows: &[Vec<[f64; 2]>]) -> Result<Operator> {
    Ok(Operator::from_rows(&rows.iter().map(|r| to_c64(r)).collect::<Vec<_>>())?)
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<PointerInstance> {
        let pre = StateVector::normalized(to_c64(&self.pre))?;
        let post = StateVector::normalized(to_c64(&self.post))?;
        let max_at = self.observables.iter().map(|o| o.at).max().unwrap_or(0);
        let evolution = match &self.segments {
            Some(segs) => SegmentedEvolution::new(segs.iter().map(|s| to_operator(s)).collect::<Result<Vec<_>>>()?)?,
            None => SegmentedEvolution::trivial(pre.dim(), max_at.max(1)),
        };
        let observables = self
            .observables
            .iter()
            .map(|o| Ok(TimedOperator::new(o.at, to_operator(&o.matrix)?)))
            .collect::<Result<Vec<_>>>()?;
        PointerInstance::new(pre, post, evolution, observables)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::*;
    use crate::linalg::Projector;

    fn meter() -> GaussianMeter {
        GaussianMeter::new(1.0, 1024, 16.0).unwrap()
    }

    fn variance_x(state: &MeterState) -> f64 {
        let xs = state.meter().positions();
        let dx = state.meter().dx();
        state.amplitudes().iter().zip(&xs).map(|(z, x)| z.norm_sqr() * x * x * dx).sum()
    }

    fn variance_k(state: &MeterState) -> f64 {
        let mut data = state.amplitudes().to_vec();
        FftPair::new(data.len()).forward.process(&mut data);
        let ks = state.meter().wave_numbers();
        let total: f64 = data.iter().map(|z| z.norm_sqr()).sum();
        data.iter().zip(&ks).map(|(z, k)| z.norm_sqr() * k * k).sum::<f64>() / total
    }

    #[test]
    fn initial_meter_statistics() {
        let s = initial_meter(&meter());
        assert!((s.norm() - 1.0).abs() < 1e-12);
        let mom = meter_moments(&s);
        assert!(mom.mean_x[0].abs() < 1e-12);
        assert!((variance_x(&s) - 1.0).abs() < 1e-6);
        assert!((variance_k(&s) - 0.25).abs() < 0.25e-6);

        let narrow = GaussianMeter::new(0.5, 1024, 16.0).unwrap();
        assert!((variance_k(&initial_meter(&narrow)) - 1.0).abs() < 1e-6);
        assert!((variance_x(&initial_meter(&narrow)) - 0.25).abs() < 0.25e-6);
    }

    #[test]
    fn meter_validation() {
        assert!(matches!(GaussianMeter::new(3.0, 256, 16.0), Err(PointerError::InvalidGrid(_))));
        assert!(matches!(GaussianMeter::new(1.0, 256, 32.0), Err(PointerError::GridTooCoarse { .. })));
        assert!(matches!(GaussianMeter::new(1.0, 1000, 16.0), Err(PointerError::InvalidGrid(_))));
        assert!(matches!(GaussianMeter::new(1.0, 128, 8.0), Err(PointerError::InvalidGrid(_))));
        assert!(matches!(GaussianMeter::new(-1.0, 1024, 16.0), Err(PointerError::InvalidGrid(_))));
        GaussianMeter::new(1.0, 256, 8.0).unwrap();
    }

    #[test]
    fn identity_coupling_translates() {
        let m = meter();
        let js = JointState::product(&ket0(), &m, 1).unwrap();
        for g in [0.3, 1.0, 4.0] {
            let c = CouplingSpec { g, observable: Operator::identity(2), meter_index: 0, at: 1 };
            let out = evolve_impulsive(&js, &c).unwrap();
            assert!((out.norm() - 1.0).abs() < 1e-12);
            let (state, p) = postselect(&out, &ket0()).unwrap();
            assert!((p - 1.0).abs() < 1e-12);
            let mom = meter_moments(&state);
            assert!((mom.mean_x[0] - g).abs() < 1e-9, "g={g}: {}", mom.mean_x[0]);
        }
    }

    #[test]
    fn eigenstate_coupling_shifts_by_eigenvalue() {
        let m = meter();
        let js = JointState::product(&ket1(), &m, 1).unwrap();
        let c = CouplingSpec { g: 0.5, observable: pauli_z(), meter_index: 0, at: 1 };
        let out = evolve_impulsive(&js, &c).unwrap();
        let (state, _) = postselect(&out, &ket1()).unwrap();
        assert!((meter_moments(&state).mean_x[0] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_coupling_is_bitwise_identity() {
        let js = JointState::product(&ket_plus(), &meter(), 1).unwrap();
        let c = CouplingSpec { g: 0.0, observable: pauli_x(), meter_index: 0, at: 1 };
        assert_eq!(evolve_impulsive(&js, &c).unwrap(), js);
    }

    #[test]
    fn coupling_errors() {
        let js = JointState::product(&ket_plus(), &meter(), 1).unwrap();
        let bad = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let c = CouplingSpec { g: 0.1, observable: bad, meter_index: 0, at: 1 };
        assert!(matches!(evolve_impulsive(&js, &c), Err(PointerError::Linalg(LinalgError::NotHermitian { .. }))));
        let c = CouplingSpec { g: 0.1, observable: pauli_x(), meter_index: 1, at: 1 };
        assert!(matches!(evolve_impulsive(&js, &c), Err(PointerError::MeterIndex { .. })));
        let c = CouplingSpec { g: 5.0, observable: pauli_x(), meter_index: 0, at: 1 };
        assert!(matches!(evolve_impulsive(&js, &c), Err(PointerError::ShiftTooLarge { .. })));
    }

    #[test]
    fn postselection_cases() {
        let js = JointState::product(&ket0(), &meter(), 1).unwrap();
        assert!(matches!(postselect(&js, &ket1()), Err(PointerError::PostSelectionImpossible { .. })));
        let (state, p) = postselect(&js, &ket0()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert_eq!(state.amplitudes(), &meter().initial_wavefunction()[..]);
    }

    #[test]
    fn postselection_matches_dense_contraction() {
        // Oracle: contract the full joint array with ⟨ψ_f| entry by entry.
        let m = GaussianMeter::new(1.0, 256, 8.0).unwrap();
        let pre = StateVector::normalized(vec![C64::new(0.6, 0.1), C64::new(-0.3, 0.7)]).unwrap();
        let post = StateVector::normalized(vec![C64::new(0.2, -0.5), C64::new(0.9, 0.0)]).unwrap();
        let mut js = JointState::product(&pre, &m, 1).unwrap();
        js = evolve_impulsive(&js, &CouplingSpec { g: 0.4, observable: pauli_y(), meter_index: 0, at: 1 }).unwrap();
        let (_, p) = postselect(&js, &post).unwrap();
        let per = m.grid_points();
        let mut oracle = 0.0;
        for r in 0..per {
            let amp = post.entries()[0].conj() * js.amplitudes()[r] + post.entries()[1].conj() * js.amplitudes()[per + r];
            oracle += amp.norm_sqr() * m.dx();
        }
        assert!((p - oracle).abs() < 1e-12);
    }

    #[test]
    fn phase_ramp_moves_mean_k() {
        let m = meter();
        let k0 = 0.7;
        let amps: Vec<C64> = m
            .initial_wavefunction()
            .iter()
            .zip(m.positions())
            .map(|(z, x)| z * C64::from_polar(1.0, k0 * x))
            .collect();
        let mom = meter_moments(&MeterState::new(m, 1, amps).unwrap());
        assert!((mom.mean_k[0] - k0).abs() < 1e-6);
        assert!(mom.mean_x[0].abs() < 1e-12);
        assert!(mom.correlators.is_none());
    }

    #[test]
    fn uncoupled_two_meter_moments_vanish() {
        let m = GaussianMeter::new(1.0, 256, 8.0).unwrap();
        let js = JointState::product(&ket0(), &m, 2).unwrap();
        let (state, _) = postselect(&js, &ket0()).unwrap();
        let mom = meter_moments(&state);
        let c = mom.correlators.unwrap();
        for v in [mom.mean_x[0], mom.mean_x[1], mom.mean_k[0], mom.mean_k[1], c.xx, c.kk, c.xk, c.kx] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn identity_observable_estimates_one() {
        let inst = PointerInstance::new(
            ket0(),
            ket_plus(),
            SegmentedEvolution::trivial(2, 1),
            vec![TimedOperator::new(1, Operator::identity(2))],
        )
        .unwrap();
        for g in [0.01, 0.1, 0.3] {
            let run = simulate(&inst, &meter(), g).unwrap();
            let est = extract_single_wv(&run.moments, 0, g, 1.0);
            assert!((est - C64::new(1.0, 0.0)).norm() < 1e-9);
        }
        let study = scaling_study(&inst, &meter(), &[0.02, 0.04]).unwrap();
        assert!(study.rows.iter().all(|r| r.shift_residual < 1e-10));
    }

    #[test]
    fn sequential_identity_correlators() {
        let m = GaussianMeter::new(1.0, 256, 8.0).unwrap();
        let inst = PointerInstance::new(
            ket0(),
            ket_plus(),
            SegmentedEvolution::trivial(2, 2),
            vec![TimedOperator::new(1, Operator::identity(2)), TimedOperator::new(2, Operator::identity(2))],
        )
        .unwrap();
        let g = 0.1;
        let c = simulate(&inst, &m, g).unwrap().moments.correlators.unwrap();
        assert!((c.xx - g * g).abs() < 1e-10);
        assert!(c.kk.abs() < 1e-10 && c.xk.abs() < 1e-10 && c.kx.abs() < 1e-10);
        let est = extract_sequential_wv(&c, C64::new(1.0, 0.0), C64::new(1.0, 0.0), g, 1.0);
        assert!((est.correlator_difference - C64::new(1.0, 0.0)).norm() < 1e-8);
        let zero = simulate(&inst, &m, 0.0).unwrap().moments.correlators.unwrap();
        assert!(zero.xx.abs() < 1e-14 && zero.kk.abs() < 1e-14);
    }

    #[test]
    fn instance_validation() {
        let ev = SegmentedEvolution::trivial(2, 2);
        let bad = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(PointerInstance::new(ket0(), ket_plus(), ev.clone(), vec![TimedOperator::new(1, bad)]).is_err());
        assert!(PointerInstance::new(ket0(), ket_plus(), ev.clone(), vec![]).is_err());
        let p = Projector::onto(&ket_plus()).unwrap().operator().clone();
        assert!(PointerInstance::new(
            ket0(),
            ket_plus(),
            ev,
            vec![TimedOperator::new(2, p.clone()), TimedOperator::new(1, p)]
        )
        .is_err());
    }

    #[test]
    fn instance_json() {
        let text = r#"{"pre": [[1,0],[0,0]], "post": [[1,0],[1,0]],
            "observables": [{"at": 1, "matrix": [[[0.5,0],[0,-0.5]],[[0,0.5],[0.5,0]]]}]}"#;
        let inst = PointerInstance::from_json(text).unwrap();
        let w = inst.single_weak_values().unwrap()[0];
        // (I+Y)/2 between |0⟩ and |+⟩: (1 + i)/2.
        assert!((w - C64::new(0.5, 0.5)).norm() < 1e-14);
        assert!(PointerInstance::from_json("{").is_err());
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [0.1, 0.2, 0.4].iter().map(|&g: &f64| (g, 3.0 * g.powi(3))).collect();
        assert!((log_log_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert!(log_log_slope(&[(0.1, 0.0), (0.2, 0.0)]).is_none());
    }
}
