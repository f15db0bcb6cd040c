//! Single-time and sequential weak values, and their relation to history
//! amplitudes.
//!
//! A sequential weak value inserts operators at strictly increasing time
//! ordinals between the evolution segments and divides the resulting
//! transition amplitude by the bare one. For a history of projectors this
//! ratio equals the history amplitude over the Feynman sum, which is what
//! most of the checks here exploit.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::histories::{
    enumerate_histories, feynman_sum, histories_orthogonal, history_amplitude, tree_sum, HistoryError,
    HistorySpace, QuantumHistory, SegmentedEvolution,
};
use crate::linalg::{spectral_decompose, LinalgError, Operator, ProjectorFamily, StateVector, TAU_OP};

/// Relative conditioning below which a weak value is withheld.
pub const TAU_DEN: f64 = 1e-8;
/// Largest number of eigen-index tuples expanded by [`general_swv`].
pub const SPECTRAL_TERM_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeakValueError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("transition amplitude {denominator} too small (numerator {numerator}); weak value is unconditioned")]
    ZeroDenominator { numerator: C64, denominator: C64 },
    #[error("operator times must be strictly increasing (violated at position {position})")]
    NonIncreasingTimes { position: usize },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("insertion time {0} is already occupied")]
    OccupiedTime(usize),
}

pub type Result<T> = std::result::Result<T, WeakValueError>;

/// An operator inserted at a time ordinal (`0 = t_i`, `k+1 = t_f`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimedOperator {
    pub at: usize,
    pub op: Operator,
}

impl TimedOperator {
    pub fn new(at: usize, op: Operator) -> Self {
        Self { at, op }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakValueResult {
    pub value: C64,
    pub numerator: C64,
    pub denominator: C64,
    /// `|denominator| / (‖ψ_i‖ ‖ψ_f‖)`.
    pub conditioning: f64,
}

impl WeakValueResult {
    fn from_parts(numerator: C64, denominator: C64, scale: f64) -> Result<Self> {
        let conditioning = if scale > 0.0 { denominator.norm() / scale } else { 0.0 };
        if conditioning <= TAU_DEN {
            return Err(WeakValueError::ZeroDenominator { numerator, denominator });
        }
        Ok(Self { value: numerator / denominator, numerator, denominator, conditioning })
    }
}

fn check_times(ops: &[TimedOperator], ev: &SegmentedEvolution) -> Result<()> {
    let last = ev.grid().final_ordinal();
    for (i, op) in ops.iter().enumerate() {
        if op.at > last {
            return Err(HistoryError::TimeOutOfRange { ordinal: op.at, k: ev.grid().intermediate_count() }.into());
        }
        if op.op.dim() != ev.dim() {
            return Err(HistoryError::DimensionMismatch { expected: ev.dim(), found: op.op.dim() }.into());
        }
        if i > 0 && op.at <= ops[i - 1].at {
            return Err(WeakValueError::NonIncreasingTimes { position: i });
        }
    }
    Ok(())
}

/// `⟨ψ_f|T_{f,k} A_k … A_1 T_{1,i}|ψ_i⟩`.
pub fn sequential_numerator(
    ops: &[TimedOperator],
    pre: &StateVector,
    post: &StateVector,
    ev: &SegmentedEvolution,
) -> Result<C64> {
    check_times(ops, ev)?;
    if post.dim() != pre.dim() {
        return Err(HistoryError::DimensionMismatch { expected: pre.dim(), found: post.dim() }.into());
    }
    let mut v = pre.clone();
    let mut now = 0;
    for t in ops {
        v = t.op.apply(&ev.propagate(&v, now, t.at)?);
        now = t.at;
    }
    v = ev.propagate(&v, now, ev.grid().final_ordinal())?;
    Ok(post.inner(&v))
}

/// `⟨ψ_f|T_{f,i}|ψ_i⟩`.
pub fn transition_amplitude(pre: &StateVector, post: &StateVector, ev: &SegmentedEvolution) -> Result<C64> {
    sequential_numerator(&[], pre, post, ev)
}

/// Weak value of `a` inserted at ordinal `at`.
pub fn weak_value(
    a: &Operator,
    pre: &StateVector,
    post: &StateVector,
    ev: &SegmentedEvolution,
    at: usize,
) -> Result<WeakValueResult> {
    sequential_weak_value(&[TimedOperator::new(at, a.clone())], pre, post, ev)
}

/// Sequential weak value of the time-ordered operators. An empty list gives 1.
pub fn sequential_weak_value(
    ops: &[TimedOperator],
    pre: &StateVector,
    post: &StateVector,
    ev: &SegmentedEvolution,
) -> Result<WeakValueResult> {
    let numerator = sequential_numerator(ops, pre, post, ev)?;
    let denominator = transition_amplitude(pre, post, ev)?;
    WeakValueResult::from_parts(numerator, denominator, pre.norm() * post.norm())
}

/// The intermediate projectors of a history as timed operators at `1..=k`.
pub fn history_operators(h: &QuantumHistory) -> Vec<TimedOperator> {
    h.intermediates()
        .iter()
        .enumerate()
        .map(|(j, p)| TimedOperator::new(j + 1, p.operator().clone()))
        .collect()
}

/// History amplitude divided by the total Feynman sum of the space.
pub fn swv_as_amplitude_ratio(
    h: &QuantumHistory,
    space: &HistorySpace,
    ev: &SegmentedEvolution,
) -> Result<WeakValueResult> {
    let total = feynman_sum(space, ev, false)?;
    let amp = history_amplitude(h, space, ev)?;
    WeakValueResult::from_parts(amp, total, 1.0)
}

/// `Σ_s ψ_s / Σ_s ψ_s` computed term by term over every history.
pub fn swv_complete_sum(space: &HistorySpace, ev: &SegmentedEvolution) -> Result<C64> {
    let total = feynman_sum(space, ev, false)?;
    WeakValueResult::from_parts(total, total, 1.0)?;
    let count = enumerate_histories(space)?.len();
    let term = |p: usize| -> C64 {
        space.amplitude_of(&space.index_at(p), ev).expect("index in range") / total
    };
    Ok(tree_sum(0, count, &term))
}

/// Fine-grained refinement of a coarse sequential weak value.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub coarse: WeakValueResult,
    /// Member indices chosen at each inserted slot, with the resulting value.
    pub parts: Vec<(Vec<usize>, WeakValueResult)>,
    pub sum: C64,
}

/// Inserts a complete projector family at each given time and evaluates
/// every combination. The parts sum to the coarse value.
pub fn refine_swv(
    coarse: &[TimedOperator],
    insertions: &[(usize, &ProjectorFamily)],
    pre: &StateVector,
    post: &StateVector,
    ev: &SegmentedEvolution,
) -> Result<Refinement> {
    let coarse_value = sequential_weak_value(coarse, pre, post, ev)?;
    for (i, (at, fam)) in insertions.iter().enumerate() {
        if coarse.iter().any(|c| c.at == *at) || insertions[..i].iter().any(|(b, _)| b == at) {
            return Err(WeakValueError::OccupiedTime(*at));
        }
        if fam.dim() != ev.dim() {
            return Err(HistoryError::DimensionMismatch { expected: ev.dim(), found: fam.dim() }.into());
        }
    }
    let sizes: Vec<usize> = insertions.iter().map(|(_, f)| f.len()).collect();
    let count: usize = sizes.iter().product();
    let mut parts = Vec::with_capacity(count);
    let mut sum = C64::new(0.0, 0.0);
    for position in 0..count {
        let mut choice = vec![0; sizes.len()];
        let mut rest = position;
        for s in (0..sizes.len()).rev() {
            choice[s] = rest % sizes[s];
            rest /= sizes[s];
        }
        let mut ops: Vec<TimedOperator> = coarse.to_vec();
        for ((at, fam), &m) in insertions.iter().zip(&choice) {
            ops.push(TimedOperator::new(*at, fam.members()[m].operator().clone()));
        }
        ops.sort_by_key(|t| t.at);
        let part = sequential_weak_value(&ops, pre, post, ev)?;
        sum += part.value;
        parts.push((choice, part));
    }
    Ok(Refinement { coarse: coarse_value, parts, sum })
}

/// One eigen-index tuple of the spectral expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTerm {
    pub eigenvalues: Vec<f64>,
    pub eigenvalue_product: f64,
    pub projector_swv: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSwv {
    pub direct: WeakValueResult,
    /// `None` when the tuple count exceeds [`SPECTRAL_TERM_CAP`].
    pub terms: Option<Vec<SpectralTerm>>,
    pub spectral_sum: Option<C64>,
}

/// Sequential weak value of Hermitian observables, evaluated directly and
/// as the eigenvalue-weighted sum of projector sequential weak values.
pub fn general_swv(
    observables: &[TimedOperator],
    pre: &StateVector,
    post: &StateVector,
    ev: &SegmentedEvolution,
) -> Result<GeneralSwv> {
    let spectra = observables
        .iter()
        .map(|o| spectral_decompose(&o.op))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let direct = sequential_weak_value(observables, pre, post, ev)?;
    let sizes: Vec<usize> = spectra.iter().map(|s| s.pairs().len()).collect();
    let count: u128 = sizes.iter().map(|&s| s as u128).product();
    if count > SPECTRAL_TERM_CAP {
        return Ok(GeneralSwv { direct, terms: None, spectral_sum: None });
    }
    let mut terms = Vec::with_capacity(count as usize);
    let mut sum = C64::new(0.0, 0.0);
    for position in 0..count as usize {
        let mut rest = position;
        let mut picks = vec![0; sizes.len()];
        for s in (0..sizes.len()).rev() {
            picks[s] = rest % sizes[s];
            rest /= sizes[s];
        }
        let ops: Vec<TimedOperator> = observables
            .iter()
            .zip(&spectra)
            .zip(&picks)
            .map(|((o, spec), &p)| TimedOperator::new(o.at, spec.pairs()[p].1.operator().clone()))
            .collect();
        let eigenvalues: Vec<f64> = spectra.iter().zip(&picks).map(|(s, &p)| s.pairs()[p].0).collect();
        let eigenvalue_product = eigenvalues.iter().product();
        let projector_swv = sequential_numerator(&ops, pre, post, ev)? / direct.denominator;
        sum += projector_swv * eigenvalue_product;
        terms.push(SpectralTerm { eigenvalues, eigenvalue_product, projector_swv });
    }
    Ok(GeneralSwv { direct, terms: Some(terms), spectral_sum: Some(sum) })
}

/// Probability of observing the history in strong measurements at every
/// intermediate time, `|swv · ⟨ψ_f|T_{f,i}|ψ_i⟩|²`.
pub fn born_probability(h: &QuantumHistory, space: &HistorySpace, ev: &SegmentedEvolution) -> Result<f64> {
    let r = swv_as_amplitude_ratio(h, space, ev)?;
    Ok((r.value * r.denominator).norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeRecovery {
    pub swv: C64,
    pub probability: f64,
    pub phase: f64,
    pub amplitude: C64,
}

/// `ψ = swv · √p · e^{iθ}`.
pub fn amplitude_from_swv(swv: C64, probability: f64, phase: f64) -> Result<AmplitudeRecovery> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(WeakValueError::ProbabilityOutOfRange(probability));
    }
    let amplitude = swv * probability.sqrt() * C64::from_polar(1.0, phase);
    Ok(AmplitudeRecovery { swv, probability, phase, amplitude })
}

/// Recovers a history amplitude from its sequential weak value, taking the
/// probability and phase from the transition amplitude of the space.
pub fn recover_history_amplitude(
    h: &QuantumHistory,
    space: &HistorySpace,
    ev: &SegmentedEvolution,
) -> Result<AmplitudeRecovery> {
    let r = swv_as_amplitude_ratio(h, space, ev)?;
    amplitude_from_swv(r.value, r.denominator.norm_sqr().min(1.0), r.denominator.arg())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncompatibilityReport {
    pub is_orthogonal_to_all: bool,
    /// `|ψ_{s'}/Σψ_s + 1|²`.
    pub coherent_sum: f64,
    /// `|ψ_{s'}|²/Σ|ψ_s|² + 1`.
    pub incoherent_sum: f64,
    pub extra_amplitude: C64,
    pub total_amplitude: C64,
    pub total_probability: f64,
}

/// What happens to the unit sum when `extra` is added to the complete set
/// of histories of `space`.
pub fn incompatibility_diagnostic(
    extra: &QuantumHistory,
    space: &HistorySpace,
    ev: &SegmentedEvolution,
) -> Result<IncompatibilityReport> {
    let indices = enumerate_histories(space)?;
    let amps = indices
        .iter()
        .map(|idx| space.amplitude_of(idx, ev))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let total_amplitude = feynman_sum(space, ev, false)?;
    let total_probability: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let extra_amplitude = history_amplitude(extra, space, ev)?;
    if total_amplitude.norm() <= TAU_DEN || total_probability <= TAU_DEN * TAU_DEN {
        return Err(WeakValueError::ZeroDenominator { numerator: extra_amplitude, denominator: total_amplitude });
    }
    let mut is_orthogonal_to_all = true;
    for idx in &indices {
        if !histories_orthogonal(extra, &space.history(idx)?)? {
            is_orthogonal_to_all = false;
            break;
        }
    }
    let coherent_sum = (extra_amplitude / total_amplitude + 1.0).norm_sqr();
    let incoherent_sum = extra_amplitude.norm_sqr() / total_probability + 1.0;
    Ok(IncompatibilityReport {
        is_orthogonal_to_all,
        coherent_sum,
        incoherent_sum,
        extra_amplitude,
        total_amplitude,
        total_probability,
    })
}

/// Verifies `A` is Hermitian within the operator tolerance.
pub fn require_hermitian(a: &Operator) -> Result<()> {
    let dev = a.hermiticity_deviation();
    if dev >= TAU_OP {
        return Err(LinalgError::NotHermitian { max_dev: dev }.into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histories::{HistoryIndex, TimeGrid};
    use crate::linalg::qubit::*;
    use crate::linalg::Projector;
    use crate::random::{random_instance, rng_from_seed, InstanceShape};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn proj(v: &StateVector) -> Operator {
        Projector::onto(v).unwrap().operator().clone()
    }

    #[test]
    fn identity_weak_value_is_one() {
        let mut rng = rng_from_seed(11);
        let inst = random_instance(InstanceShape::fine(3, 2), &mut rng);
        let (pre, post) = (inst.space.pre_state(), inst.space.post_state());
        for at in 0..=3 {
            let w = weak_value(&Operator::identity(3), pre, post, &inst.evolution, at).unwrap();
            assert!((w.value - c(1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_zero_weak_value() {
        // ⟨+|1⟩⟨1|0⟩ / ⟨+|0⟩ = 0.
        let ev = SegmentedEvolution::trivial(2, 1);
        let w = weak_value(&proj(&ket1()), &ket0(), &ket_plus(), &ev, 1).unwrap();
        assert_eq!(w.value, c(0.0));
        assert!((w.denominator - c(std::f64::consts::FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn empty_sequence_is_one() {
        let ev = SegmentedEvolution::trivial(2, 2);
        let w = sequential_weak_value(&[], &ket0(), &ket_plus(), &ev).unwrap();
        assert_eq!(w.value, c(1.0));
    }

    #[test]
    fn orthogonal_post_selection_is_rejected() {
        let ev = SegmentedEvolution::trivial(2, 1);
        let err = weak_value(&pauli_x(), &ket0(), &ket1(), &ev, 1).unwrap_err();
        match err {
            WeakValueError::ZeroDenominator { numerator, denominator } => {
                assert_eq!(denominator, c(0.0));
                assert_eq!(numerator, c(1.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_order_is_enforced() {
        let ev = SegmentedEvolution::trivial(2, 2);
        let ops = vec![TimedOperator::new(2, pauli_x()), TimedOperator::new(1, pauli_z())];
        assert!(matches!(
            sequential_weak_value(&ops, &ket0(), &ket_plus(), &ev),
            Err(WeakValueError::NonIncreasingTimes { position: 1 })
        ));
        let same = vec![TimedOperator::new(1, pauli_x()), TimedOperator::new(1, pauli_z())];
        assert!(sequential_weak_value(&same, &ket0(), &ket_plus(), &ev).is_err());
        let late = vec![TimedOperator::new(4, pauli_x())];
        assert!(sequential_weak_value(&late, &ket0(), &ket_plus(), &ev).is_err());
    }

    #[test]
    fn pauli_general_swv_four_terms() {
        // Z at t_1 then X at t_2 with pre |0⟩, post |+⟩: ⟨+|XZ|0⟩/⟨+|0⟩ = 1.
        let ev = SegmentedEvolution::trivial(2, 2);
        let obs = vec![TimedOperator::new(1, pauli_z()), TimedOperator::new(2, pauli_x())];
        let g = general_swv(&obs, &ket0(), &ket_plus(), &ev).unwrap();
        assert!((g.direct.value - c(1.0)).norm() < 1e-14);
        let terms = g.terms.unwrap();
        assert_eq!(terms.len(), 4);
        // Hand expansion: Z projectors P±z, X projectors P±x.
        // (λz, λx, swv): (+1,+1, 1), (+1,-1, 0), (-1,±1, 0) since P-z|0⟩ = 0.
        let mut expected_sum = c(0.0);
        for t in &terms {
            let swv_oracle = {
                let pz = if t.eigenvalues[0] > 0.0 { proj(&ket0()) } else { proj(&ket1()) };
                let px = if t.eigenvalues[1] > 0.0 { proj(&ket_plus()) } else { proj(&ket_minus()) };
                ket_plus().inner(&px.apply(&pz.apply(&ket0()))) / ket_plus().inner(&ket0())
            };
            assert!((t.projector_swv - swv_oracle).norm() < 1e-14);
            expected_sum += swv_oracle * t.eigenvalue_product;
        }
        assert!((g.spectral_sum.unwrap() - expected_sum).norm() < 1e-14);
        assert!((expected_sum - c(1.0)).norm() < 1e-14);
    }

    #[test]
    fn general_swv_rejects_non_hermitian() {
        let ev = SegmentedEvolution::trivial(2, 1);
        let bad = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            general_swv(&[TimedOperator::new(1, bad)], &ket0(), &ket_plus(), &ev),
            Err(WeakValueError::Linalg(LinalgError::NotHermitian { .. }))
        ));
    }

    #[test]
    fn projector_observables_single_term() {
        let ev = SegmentedEvolution::trivial(2, 1);
        let obs = vec![TimedOperator::new(1, proj(&ket_plus()))];
        let g = general_swv(&obs, &ket0(), &ket_plus(), &ev).unwrap();
        let nonzero: Vec<_> = g.terms.unwrap().into_iter().filter(|t| t.eigenvalue_product != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].projector_swv - g.direct.value).norm() < 1e-14);
    }

    #[test]
    fn refinement_with_identity_family() {
        let mut rng = rng_from_seed(12);
        let inst = random_instance(InstanceShape::fine(2, 2), &mut rng);
        let fam = crate::linalg::validate_family(vec![Projector::identity(2)]).unwrap();
        let coarse = vec![TimedOperator::new(1, pauli_x())];
        let r = refine_swv(&coarse, &[(2, &fam)], inst.space.pre_state(), inst.space.post_state(), &inst.evolution)
            .unwrap();
        assert_eq!(r.parts.len(), 1);
        assert!((r.sum - r.coarse.value).norm() < 1e-14);
        assert!(matches!(
            refine_swv(&coarse, &[(1, &fam)], inst.space.pre_state(), inst.space.post_state(), &inst.evolution),
            Err(WeakValueError::OccupiedTime(1))
        ));
    }

    #[test]
    fn amplitude_recovery_cases() {
        let r = amplitude_from_swv(c(1.0), 1.0 / 64.0, 0.0).unwrap();
        assert!((r.amplitude - c(0.125)).norm() < 1e-16);
        let z = amplitude_from_swv(c(0.0), 0.3, 1.2).unwrap();
        assert_eq!(z.amplitude.norm(), 0.0);
        assert!(matches!(amplitude_from_swv(c(1.0), 1.5, 0.0), Err(WeakValueError::ProbabilityOutOfRange(_))));
        assert!(matches!(amplitude_from_swv(c(1.0), -0.1, 0.0), Err(WeakValueError::ProbabilityOutOfRange(_))));
    }

    #[test]
    fn recovered_amplitude_matches_history() {
        let mut rng = rng_from_seed(13);
        let inst = random_instance(InstanceShape::fine(3, 2), &mut rng);
        for idx in enumerate_histories(&inst.space).unwrap() {
            let h = inst.space.history(&idx).unwrap();
            let rec = recover_history_amplitude(&h, &inst.space, &inst.evolution).unwrap();
            let amp = history_amplitude(&h, &inst.space, &inst.evolution).unwrap();
            assert!((rec.amplitude - amp).norm() < 1e-12);
            assert!(rec.phase > -std::f64::consts::PI && rec.phase <= std::f64::consts::PI);
        }
    }

    #[test]
    fn zero_amplitude_history() {
        let fams = vec![ProjectorFamily::computational(2).unwrap()];
        let space = HistorySpace::new(TimeGrid::new(1), fams, ket0(), ket_plus()).unwrap();
        let ev = SegmentedEvolution::trivial(2, 1);
        let h = space.history(&HistoryIndex(vec![1])).unwrap();
        let r = swv_as_amplitude_ratio(&h, &space, &ev).unwrap();
        assert_eq!(r.value, c(0.0));
        assert_eq!(born_probability(&h, &space, &ev).unwrap(), 0.0);
        let rep = incompatibility_diagnostic(
            &QuantumHistory::new(space.pre_projector().clone(), vec![Projector::identity(2)], space.post_projector().clone())
                .unwrap(),
            &space,
            &ev,
        );
        // The coarse identity history reproduces the whole sum: |1 + 1|² = 4.
        assert!((rep.unwrap().coherent_sum - 4.0).abs() < 1e-12);
    }

    #[test]
    fn k0_complete_sum_is_one() {
        let mut rng = rng_from_seed(14);
        let inst = random_instance(InstanceShape::fine(3, 0), &mut rng);
        let s = swv_complete_sum(&inst.space, &inst.evolution).unwrap();
        assert!((s - c(1.0)).norm() < 1e-14);
    }
}
