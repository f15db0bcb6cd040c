//! Seeded randomized checks of the history and weak-value identities.
//!
//! Each suite draws `trials` instances from one generator seeded with
//! `seed` and reports the largest deviation seen against its tolerance.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::histories::{feynman_sum, HistoryError};
use crate::random::{random_hermitian, random_instance, rng_from_seed, InstanceShape, InstanceRng, RandomInstance};
use crate::weakvalues::{
    born_probability, general_swv, history_operators, recover_history_amplitude, refine_swv, sequential_weak_value,
    swv_as_amplitude_ratio, swv_complete_sum, transition_amplitude, TimedOperator, WeakValueError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Sequential weak values of a complete set of histories sum to one.
    Unity,
    /// A history's sequential weak value equals its amplitude over the sum.
    Ratio,
    /// Refining one slot with a complete family preserves the coarse value.
    Coarse,
    /// Pruned and unpruned Feynman sums equal the transition amplitude.
    Continuity,
    /// Born probability and amplitude recovery from the weak value.
    Born,
    /// Direct and spectral sequential weak values of observables agree.
    Gswv,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Unity, Suite::Ratio, Suite::Coarse, Suite::Continuity, Suite::Born, Suite::Gswv];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Unity => "unity",
            Suite::Ratio => "ratio",
            Suite::Coarse => "coarse",
            Suite::Continuity => "continuity",
            Suite::Born => "born",
            Suite::Gswv => "gswv",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Unity | Suite::Continuity | Suite::Gswv => 1e-9,
            Suite::Ratio | Suite::Coarse | Suite::Born => 1e-10,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite '{s}' (expected one of unity, ratio, coarse, continuity, born, gswv)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub dim: usize,
    pub intermediate_count: usize,
    pub seed: u64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuiteError {
    #[error("invalid suite configuration: {0}")]
    Config(String),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    WeakValue(#[from] WeakValueError),
}

fn random_history(inst: &RandomInstance, rng: &mut InstanceRng) -> crate::histories::QuantumHistory {
    let size = inst.space.size() as usize;
    let idx = inst.space.index_at(rng.random_range(0..size));
    inst.space.history(&idx).expect("index in range")
}

fn trial(suite: Suite, cfg: &SuiteConfig, t: usize, rng: &mut InstanceRng) -> Result<f64, SuiteError> {
    let (n, k) = (cfg.dim, cfg.intermediate_count);
    let mut shape = InstanceShape::fine(n, k);
    shape.fine_grained = t % 2 == 0;
    match suite {
        Suite::Unity => {
            let inst = random_instance(shape, rng);
            Ok((swv_complete_sum(&inst.space, &inst.evolution)? - 1.0).norm())
        }
        Suite::Ratio => {
            let inst = random_instance(shape, rng);
            let h = random_history(&inst, rng);
            let (pre, post) = (inst.space.pre_state(), inst.space.post_state());
            let direct = sequential_weak_value(&history_operators(&h), pre, post, &inst.evolution)?;
            let ratio = swv_as_amplitude_ratio(&h, &inst.space, &inst.evolution)?;
            Ok((direct.value - ratio.value).norm())
        }
        Suite::Coarse => {
            shape.fine_grained = false;
            let inst = random_instance(shape, rng);
            let h = random_history(&inst, rng);
            let ops = history_operators(&h);
            let (pre, post) = (inst.space.pre_state(), inst.space.post_state());
            let mut worst: f64 = 0.0;
            for slot in 1..=k {
                let coarse: Vec<TimedOperator> = ops.iter().filter(|o| o.at != slot).cloned().collect();
                let family = &inst.space.families()[slot - 1];
                let r = refine_swv(&coarse, &[(slot, family)], pre, post, &inst.evolution)?;
                worst = worst.max((r.sum - r.coarse.value).norm());
            }
            Ok(worst)
        }
        Suite::Continuity => {
            shape.sparse_unitaries = true;
            let inst = random_instance(shape, rng);
            let target = transition_amplitude(inst.space.pre_state(), inst.space.post_state(), &inst.evolution)?;
            let pruned = feynman_sum(&inst.space, &inst.evolution, true)?;
            let full = feynman_sum(&inst.space, &inst.evolution, false)?;
            Ok((pruned - target).norm().max((full - target).norm()))
        }
        Suite::Born => {
            let inst = random_instance(shape, rng);
            let h = random_history(&inst, rng);
            let amp = crate::histories::history_amplitude(&h, &inst.space, &inst.evolution)?;
            let p = born_probability(&h, &inst.space, &inst.evolution)?;
            let rec = recover_history_amplitude(&h, &inst.space, &inst.evolution)?;
            Ok((p - amp.norm_sqr()).abs().max((rec.amplitude - amp).norm()))
        }
        Suite::Gswv => {
            let inst = random_instance(shape, rng);
            let obs: Vec<TimedOperator> =
                (1..=k).map(|at| TimedOperator::new(at, random_hermitian(n, 1.0, rng))).collect();
            let g = general_swv(&obs, inst.space.pre_state(), inst.space.post_state(), &inst.evolution)?;
            let spectral: C64 = g.spectral_sum.ok_or_else(|| SuiteError::Config("spectral expansion too large".into()))?;
            Ok((g.direct.value - spectral).norm())
        }
    }
}

pub fn run_suite(suite: Suite, cfg: &SuiteConfig) -> Result<SuiteOutcome, SuiteError> {
    if cfg.dim == 0 || cfg.dim > crate::linalg::MAX_DIM {
        return Err(SuiteError::Config(format!("dimension must be in 1..={}", crate::linalg::MAX_DIM)));
    }
    if cfg.trials == 0 {
        return Err(SuiteError::Config("at least one trial is required".into()));
    }
    if suite == Suite::Coarse && cfg.intermediate_count == 0 {
        return Err(SuiteError::Config("the coarse suite needs at least one intermediate time".into()));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut max_deviation: f64 = 0.0;
    for t in 0..cfg.trials {
        max_deviation = max_deviation.max(trial(suite, cfg, t, &mut rng)?);
    }
    let tolerance = suite.tolerance();
    Ok(SuiteOutcome { suite, trials: cfg.trials, max_deviation, tolerance, passed: max_deviation < tolerance })
}
