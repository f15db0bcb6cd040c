//! Finite history spaces: time grids, segmented evolutions, chain operators,
//! history amplitudes and Feynman summation with continuity pruning.
//!
//! A history picks one projector per intermediate time slot. Histories are
//! addressed by [`HistoryIndex`] tuples into the per-slot families and are
//! only materialized as operators on demand.

use std::fmt;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::linalg::{
    validate_unitary, LinalgError, Operator, Projector, ProjectorFamily, StateVector, TAU_OP,
};

/// Matrix elements below this are structural zeros for continuity pruning.
pub const TAU_PRUNE: f64 = 1e-12;
/// Default cap on the number of enumerated histories.
pub const DEFAULT_HISTORY_CAP: u64 = 10_000_000;

const LEAF_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("history shapes differ ({left} vs {right} intermediate slots)")]
    ShapeMismatch { left: usize, right: usize },
    #[error("expected {expected} intermediate families, found {found}")]
    FamilyCount { expected: usize, found: usize },
    #[error("history count {count} exceeds cap {cap}")]
    SizeOverflow { count: u128, cap: u64 },
    #[error("time ordinal {ordinal} outside grid with {k} intermediate times")]
    TimeOutOfRange { ordinal: usize, k: usize },
    #[error("index {index} out of range for slot {slot} with {size} members")]
    IndexOutOfRange { slot: usize, index: usize, size: usize },
}

pub type Result<T> = std::result::Result<T, HistoryError>;

/// Ordinal time labels `t_i, t_1, …, t_k, t_f`, stored as `0..=k+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    intermediate_count: usize,
}

impl TimeGrid {
    pub fn new(intermediate_count: usize) -> Self {
        Self { intermediate_count }
    }

    pub fn intermediate_count(&self) -> usize {
        self.intermediate_count
    }

    pub fn final_ordinal(&self) -> usize {
        self.intermediate_count + 1
    }

    pub fn label(&self, ordinal: usize) -> Result<TimeLabel> {
        match ordinal {
            0 => Ok(TimeLabel::Initial),
            o if o <= self.intermediate_count => Ok(TimeLabel::Intermediate(o)),
            o if o == self.final_ordinal() => Ok(TimeLabel::Final),
            o => Err(HistoryError::TimeOutOfRange { ordinal: o, k: self.intermediate_count }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeLabel {
    Initial,
    Intermediate(usize),
    Final,
}

impl fmt::Display for TimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeLabel::Initial => write!(f, "t_i"),
            TimeLabel::Intermediate(j) => write!(f, "t_{j}"),
            TimeLabel::Final => write!(f, "t_f"),
        }
    }
}

/// One evolution operator per segment; segment `j` maps ordinal `j` to
/// ordinal `j + 1`.
///
/// Built with [`SegmentedEvolution::new`] every segment is checked to be
/// unitary. [`SegmentedEvolution::from_propagators`] accepts arbitrary
/// square matrices, e.g. truncated network propagators; all amplitude
/// formulas stay well defined, only the unitary-specific guarantees are lost.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedEvolution {
    grid: TimeGrid,
    segments: Vec<Operator>,
    unitary: bool,
}

impl SegmentedEvolution {
    pub fn new(segments: Vec<Operator>) -> Result<Self> {
        let ev = Self::from_propagators(segments)?;
        for s in &ev.segments {
            validate_unitary(s.clone())?;
        }
        Ok(Self { unitary: true, ..ev })
    }

    pub fn from_propagators(segments: Vec<Operator>) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(HistoryError::FamilyCount { expected: 1, found: 0 });
        };
        let dim = first.dim();
        for s in &segments {
            if s.dim() != dim {
                return Err(HistoryError::DimensionMismatch { expected: dim, found: s.dim() });
            }
        }
        Ok(Self { grid: TimeGrid::new(segments.len() - 1), segments, unitary: false })
    }

    /// `k + 1` identity segments.
    pub fn trivial(dim: usize, intermediate_count: usize) -> Self {
        Self {
            grid: TimeGrid::new(intermediate_count),
            segments: vec![Operator::identity(dim); intermediate_count + 1],
            unitary: true,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.segments[0].dim()
    }

    pub fn segments(&self) -> &[Operator] {
        &self.segments
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    fn check_span(&self, from: usize, to: usize) -> Result<()> {
        let last = self.grid.final_ordinal();
        for o in [from, to] {
            if o > last {
                return Err(HistoryError::TimeOutOfRange { ordinal: o, k: self.grid.intermediate_count });
            }
        }
        if from > to {
            return Err(HistoryError::TimeOutOfRange { ordinal: from, k: self.grid.intermediate_count });
        }
        Ok(())
    }

    /// The evolution operator from ordinal `from` to ordinal `to ≥ from`.
    pub fn between(&self, from: usize, to: usize) -> Result<Operator> {
        self.check_span(from, to)?;
        Ok(self.segments[from..to]
            .iter()
            .fold(Operator::identity(self.dim()), |acc, s| s.mul(&acc)))
    }

    /// Total evolution from `t_i` to `t_f`.
    pub fn total(&self) -> Operator {
        self.between(0, self.grid.final_ordinal()).expect("full span is valid")
    }

    /// Applies the segments between `from` and `to` to a vector.
    pub fn propagate(&self, v: &StateVector, from: usize, to: usize) -> Result<StateVector> {
        self.check_span(from, to)?;
        if v.dim() != self.dim() {
            return Err(HistoryError::DimensionMismatch { expected: self.dim(), found: v.dim() });
        }
        Ok(self.segments[from..to].iter().fold(v.clone(), |acc, s| s.apply(&acc)))
    }

    /// The time-reversed evolution: segments in reverse order, each adjointed.
    pub fn reversed_adjoint(&self) -> Self {
        Self {
            grid: self.grid,
            segments: self.segments.iter().rev().map(Operator::adjoint).collect(),
            unitary: self.unitary,
        }
    }
}

/// A materialized history `P_f ⊙ P_k ⊙ … ⊙ P_1 ⊙ P_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumHistory {
    pre: Projector,
    post: Projector,
    intermediates: Vec<Projector>,
}

impl QuantumHistory {
    pub fn new(pre: Projector, intermediates: Vec<Projector>, post: Projector) -> Result<Self> {
        let dim = pre.dim();
        for p in intermediates.iter().chain(std::iter::once(&post)) {
            if p.dim() != dim {
                return Err(HistoryError::DimensionMismatch { expected: dim, found: p.dim() });
            }
        }
        Ok(Self { pre, post, intermediates })
    }

    pub fn pre(&self) -> &Projector {
        &self.pre
    }

    pub fn post(&self) -> &Projector {
        &self.post
    }

    pub fn intermediates(&self) -> &[Projector] {
        &self.intermediates
    }

    pub fn dim(&self) -> usize {
        self.pre.dim()
    }

    /// All slots in time order: pre, intermediates, post.
    pub fn slots(&self) -> impl Iterator<Item = &Projector> {
        std::iter::once(&self.pre).chain(self.intermediates.iter()).chain(std::iter::once(&self.post))
    }
}

/// A history addressed by member indices into the intermediate families.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryIndex(pub Vec<usize>);

impl fmt::Display for HistoryIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Pre/post states plus one complete projector family per intermediate time.
#[derive(Debug, Clone)]
pub struct HistorySpace {
    grid: TimeGrid,
    families: Vec<ProjectorFamily>,
    pre_state: StateVector,
    post_state: StateVector,
    pre: Projector,
    post: Projector,
    cap: u64,
}

impl HistorySpace {
    pub fn new(
        grid: TimeGrid,
        families: Vec<ProjectorFamily>,
        pre_state: StateVector,
        post_state: StateVector,
    ) -> Result<Self> {
        if families.len() != grid.intermediate_count() {
            return Err(HistoryError::FamilyCount {
                expected: grid.intermediate_count(),
                found: families.len(),
            });
        }
        let dim = pre_state.dim();
        if post_state.dim() != dim {
            return Err(HistoryError::DimensionMismatch { expected: dim, found: post_state.dim() });
        }
        for f in &families {
            if f.dim() != dim {
                return Err(HistoryError::DimensionMismatch { expected: dim, found: f.dim() });
            }
        }
        pre_state.require_normalized()?;
        post_state.require_normalized()?;
        let pre = Projector::onto(&pre_state)?;
        let post = Projector::onto(&post_state)?;
        Ok(Self { grid, families, pre_state, post_state, pre, post, cap: DEFAULT_HISTORY_CAP })
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.pre_state.dim()
    }

    pub fn families(&self) -> &[ProjectorFamily] {
        &self.families
    }

    pub fn pre_state(&self) -> &StateVector {
        &self.pre_state
    }

    pub fn post_state(&self) -> &StateVector {
        &self.post_state
    }

    pub fn pre_projector(&self) -> &Projector {
        &self.pre
    }

    pub fn post_projector(&self) -> &Projector {
        &self.post
    }

    /// `Π` family sizes, unchecked against the cap.
    pub fn size(&self) -> u128 {
        self.families.iter().map(|f| f.len() as u128).product()
    }

    fn checked_size(&self) -> Result<usize> {
        let count = self.size();
        if count > self.cap as u128 {
            return Err(HistoryError::SizeOverflow { count, cap: self.cap });
        }
        Ok(count as usize)
    }

    /// Mixed-radix decoding of a lexicographic position, last slot fastest.
    pub fn index_at(&self, mut position: usize) -> HistoryIndex {
        let mut idx = vec![0; self.families.len()];
        for (slot, fam) in self.families.iter().enumerate().rev() {
            idx[slot] = position % fam.len();
            position /= fam.len();
        }
        HistoryIndex(idx)
    }

    fn check_index(&self, idx: &HistoryIndex) -> Result<()> {
        if idx.0.len() != self.families.len() {
            return Err(HistoryError::ShapeMismatch { left: idx.0.len(), right: self.families.len() });
        }
        for (slot, (&i, fam)) in idx.0.iter().zip(&self.families).enumerate() {
            if i >= fam.len() {
                return Err(HistoryError::IndexOutOfRange { slot, index: i, size: fam.len() });
            }
        }
        Ok(())
    }

    pub fn history(&self, idx: &HistoryIndex) -> Result<QuantumHistory> {
        self.check_index(idx)?;
        let intermediates =
            idx.0.iter().zip(&self.families).map(|(&i, f)| f.members()[i].clone()).collect();
        QuantumHistory::new(self.pre.clone(), intermediates, self.post.clone())
    }

    /// Projector choices available at each slot, pre and post included.
    fn slot_members(&self, slot: usize) -> &[Projector] {
        let k = self.families.len();
        if slot == 0 {
            std::slice::from_ref(&self.pre)
        } else if slot == k + 1 {
            std::slice::from_ref(&self.post)
        } else {
            self.families[slot - 1].members()
        }
    }

    fn check_evolution(&self, ev: &SegmentedEvolution) -> Result<()> {
        if ev.dim() != self.dim() {
            return Err(HistoryError::DimensionMismatch { expected: self.dim(), found: ev.dim() });
        }
        if ev.grid() != self.grid {
            return Err(HistoryError::FamilyCount {
                expected: self.grid.intermediate_count(),
                found: ev.grid().intermediate_count(),
            });
        }
        Ok(())
    }

    /// `⟨ψ_f|K(idx)|ψ_i⟩`, evaluated as a vector sweep.
    pub fn amplitude_of(&self, idx: &HistoryIndex, ev: &SegmentedEvolution) -> Result<C64> {
        self.check_index(idx)?;
        self.check_evolution(ev)?;
        Ok(self.amplitude_unchecked(idx, ev))
    }

    fn amplitude_unchecked(&self, idx: &HistoryIndex, ev: &SegmentedEvolution) -> C64 {
        let segs = ev.segments();
        let mut v = self.pre.operator().apply(&self.pre_state);
        for (slot, &i) in idx.0.iter().enumerate() {
            v = segs[slot].apply(&v);
            v = self.families[slot].members()[i].operator().apply(&v);
        }
        v = segs[idx.0.len()].apply(&v);
        v = self.post.operator().apply(&v);
        self.post_state.inner(&v)
    }
}

/// All history indices in lexicographic order, last slot varying fastest.
pub fn enumerate_histories(space: &HistorySpace) -> Result<Vec<HistoryIndex>> {
    let count = space.checked_size()?;
    Ok((0..count).map(|p| space.index_at(p)).collect())
}

/// `K = P_f T_{f,k} P_k … P_1 T_{1,i} P_i`.
pub fn chain_operator(h: &QuantumHistory, ev: &SegmentedEvolution) -> Result<Operator> {
    if h.dim() != ev.dim() {
        return Err(HistoryError::DimensionMismatch { expected: ev.dim(), found: h.dim() });
    }
    if h.intermediates.len() != ev.grid().intermediate_count() {
        return Err(HistoryError::ShapeMismatch {
            left: h.intermediates.len(),
            right: ev.grid().intermediate_count(),
        });
    }
    let mut k = h.pre.operator().clone();
    for (seg, p) in ev.segments().iter().zip(&h.intermediates) {
        k = p.operator().mul(&seg.mul(&k));
    }
    let last = ev.segments().last().expect("at least one segment");
    Ok(h.post.operator().mul(&last.mul(&k)))
}

/// `ψ_j = ⟨ψ_f|K_j|ψ_i⟩` for a materialized history.
pub fn history_amplitude(h: &QuantumHistory, space: &HistorySpace, ev: &SegmentedEvolution) -> Result<C64> {
    space.check_evolution(ev)?;
    if h.dim() != space.dim() {
        return Err(HistoryError::DimensionMismatch { expected: space.dim(), found: h.dim() });
    }
    if h.intermediates.len() != space.grid.intermediate_count() {
        return Err(HistoryError::ShapeMismatch {
            left: h.intermediates.len(),
            right: space.grid.intermediate_count(),
        });
    }
    let segs = ev.segments();
    let mut v = h.pre.operator().apply(space.pre_state());
    for (seg, p) in segs.iter().zip(&h.intermediates) {
        v = p.operator().apply(&seg.apply(&v));
    }
    v = h.post.operator().apply(&segs[segs.len() - 1].apply(&v));
    Ok(space.post_state().inner(&v))
}

/// Product of single-segment propagators `⟨ψ_{j+1}|T|ψ_j⟩` along a history
/// whose intermediate projectors are all rank 1. `None` otherwise.
pub fn propagator_amplitude(
    h: &QuantumHistory,
    space: &HistorySpace,
    ev: &SegmentedEvolution,
) -> Result<Option<C64>> {
    space.check_evolution(ev)?;
    let mut kets = vec![space.pre_state().clone()];
    for p in &h.intermediates {
        match p.rank_one_vector() {
            Some(v) => kets.push(v),
            None => return Ok(None),
        }
    }
    kets.push(space.post_state().clone());
    let amp = kets
        .windows(2)
        .zip(ev.segments())
        .map(|(w, seg)| w[1].inner(&seg.apply(&w[0])))
        .product();
    Ok(Some(amp))
}

/// Which projector pairs in consecutive slots are linked by a non-negligible
/// matrix element of the segment between them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMap {
    /// `allowed[segment][a][b]`: member `a` at the segment start links to
    /// member `b` at its end.
    allowed: Vec<Vec<Vec<bool>>>,
}

impl AdjacencyMap {
    pub fn build(space: &HistorySpace, ev: &SegmentedEvolution) -> Result<Self> {
        space.check_evolution(ev)?;
        let k = space.families.len();
        let allowed = (0..=k)
            .map(|seg| {
                let from = space.slot_members(seg);
                let to = space.slot_members(seg + 1);
                let t = &ev.segments()[seg];
                from.iter()
                    .map(|pa| {
                        let tp = t.mul(pa.operator());
                        to.iter().map(|pb| pb.operator().mul(&tp).max_abs() > TAU_PRUNE).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { allowed })
    }

    pub fn allowed(&self, segment: usize, from: usize, to: usize) -> bool {
        self.allowed[segment][from][to]
    }

    pub fn segment_count(&self) -> usize {
        self.allowed.len()
    }
}

/// True when every consecutive projector pair of the history is linked.
pub fn is_continuous(h: &HistoryIndex, adj: &AdjacencyMap) -> bool {
    let k = h.0.len();
    if adj.segment_count() != k + 1 {
        return false;
    }
    let mut prev = 0;
    for (seg, &i) in h.0.iter().enumerate() {
        if !adj.allowed(seg, prev, i) {
            return false;
        }
        prev = i;
    }
    adj.allowed(k, prev, 0)
}

/// Continuous histories in lexicographic order, found by depth-first search
/// over the adjacency relation.
pub fn continuous_histories(space: &HistorySpace, adj: &AdjacencyMap) -> Vec<HistoryIndex> {
    fn walk(
        adj: &AdjacencyMap,
        sizes: &[usize],
        prefix: &mut Vec<usize>,
        prev: usize,
        out: &mut Vec<HistoryIndex>,
    ) {
        let slot = prefix.len();
        if slot == sizes.len() {
            if adj.allowed(slot, prev, 0) {
                out.push(HistoryIndex(prefix.clone()));
            }
            return;
        }
        for i in 0..sizes[slot] {
            if adj.allowed(slot, prev, i) {
                prefix.push(i);
                walk(adj, sizes, prefix, i, out);
                prefix.pop();
            }
        }
    }
    let sizes: Vec<usize> = space.families.iter().map(|f| f.len()).collect();
    let mut out = Vec::new();
    walk(adj, &sizes, &mut Vec::with_capacity(sizes.len()), 0, &mut out);
    out
}

/// Summation strategy for history amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Left-to-right accumulation in lexicographic order.
    Serial,
    /// Fixed-shape binary tree over the lexicographic order, evaluated in
    /// parallel. The tree depends only on the history count, so the result
    /// is bitwise identical for any thread count.
    #[default]
    PairwiseTree,
}

/// Coherent sum of history amplitudes over the whole space.
pub fn feynman_sum(space: &HistorySpace, ev: &SegmentedEvolution, pruned: bool) -> Result<C64> {
    sum_amplitudes(space, ev, pruned, Reduction::PairwiseTree)
}

pub fn sum_amplitudes(
    space: &HistorySpace,
    ev: &SegmentedEvolution,
    pruned: bool,
    reduction: Reduction,
) -> Result<C64> {
    space.check_evolution(ev)?;
    let count = space.checked_size()?;
    let adj = if pruned { Some(AdjacencyMap::build(space, ev)?) } else { None };
    let term = |p: usize| -> C64 {
        let idx = space.index_at(p);
        match &adj {
            Some(a) if !is_continuous(&idx, a) => C64::new(0.0, 0.0),
            _ => space.amplitude_unchecked(&idx, ev),
        }
    };
    Ok(match reduction {
        Reduction::Serial => (0..count).fold(C64::new(0.0, 0.0), |acc, p| acc + term(p)),
        Reduction::PairwiseTree => tree_sum(0, count, &term),
    })
}

/// Deterministic pairwise reduction of `f` over `lo..hi`.
pub fn tree_sum<F>(lo: usize, hi: usize, f: &F) -> C64
where
    F: Fn(usize) -> C64 + Sync,
{
    if hi - lo <= LEAF_SIZE {
        return (lo..hi).fold(C64::new(0.0, 0.0), |acc, p| acc + f(p));
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(|| tree_sum(lo, mid, f), || tree_sum(mid, hi, f));
    a + b
}

/// `Σ_s K_s` over every history in the space.
pub fn chain_operator_sum(space: &HistorySpace, ev: &SegmentedEvolution) -> Result<Operator> {
    let mut total = Operator::zeros(space.dim());
    for idx in enumerate_histories(space)? {
        total = total.add(&chain_operator(&space.history(&idx)?, ev)?);
    }
    Ok(total)
}

/// Orthogonality in history space through the per-slot trace factorization
/// `Tr[Q_a Q_b] = Π_t Tr[P_{a,t} P_{b,t}]`.
pub fn histories_orthogonal(a: &QuantumHistory, b: &QuantumHistory) -> Result<bool> {
    Ok(history_overlap(a, b)?.norm() < TAU_OP)
}

pub fn history_overlap(a: &QuantumHistory, b: &QuantumHistory) -> Result<C64> {
    if a.intermediates.len() != b.intermediates.len() {
        return Err(HistoryError::ShapeMismatch { left: a.intermediates.len(), right: b.intermediates.len() });
    }
    if a.dim() != b.dim() {
        return Err(HistoryError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(a.slots().zip(b.slots()).map(|(p, q)| p.operator().mul(q.operator()).trace()).product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qubit::*;
    use crate::random::{random_instance, rng_from_seed, InstanceShape};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn basis_space(n: usize, k: usize) -> HistorySpace {
        let fams = (0..k).map(|_| ProjectorFamily::computational(n).unwrap()).collect();
        let pre = StateVector::basis(n, 0).unwrap();
        let post = StateVector::basis(n, 0).unwrap();
        HistorySpace::new(TimeGrid::new(k), fams, pre, post).unwrap()
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(enumerate_histories(&basis_space(2, 3)).unwrap().len(), 8);
        let all = enumerate_histories(&basis_space(3, 2)).unwrap();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], HistoryIndex(vec![0, 0]));
        assert_eq!(all[1], HistoryIndex(vec![0, 1]));
        assert_eq!(all[3], HistoryIndex(vec![1, 0]));
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
    }

    #[test]
    fn enumeration_cap() {
        let space = basis_space(2, 5).with_cap(16);
        assert!(matches!(
            enumerate_histories(&space),
            Err(HistoryError::SizeOverflow { count: 32, cap: 16 })
        ));
        assert!(matches!(
            feynman_sum(&space, &SegmentedEvolution::trivial(2, 5), false),
            Err(HistoryError::SizeOverflow { .. })
        ));
    }

    #[test]
    fn chain_operator_without_insertions() {
        let p0 = Projector::basis(2, 0).unwrap();
        let h = QuantumHistory::new(p0.clone(), vec![], p0.clone()).unwrap();
        let k = chain_operator(&h, &SegmentedEvolution::trivial(2, 0)).unwrap();
        assert_eq!(&k, p0.operator());
    }

    #[test]
    fn chain_operator_all_identity_is_total_evolution() {
        let mut rng = rng_from_seed(4);
        let segs: Vec<Operator> = (0..3).map(|_| crate::random::random_unitary(3, &mut rng)).collect();
        let ev = SegmentedEvolution::new(segs).unwrap();
        let id = Projector::identity(3);
        let h = QuantumHistory::new(id.clone(), vec![id.clone(), id.clone()], id).unwrap();
        let k = chain_operator(&h, &ev).unwrap();
        assert!(k.max_abs_diff(&ev.total()) < 1e-14);
    }

    #[test]
    fn chain_operator_shape_errors() {
        let id = Projector::identity(2);
        let h = QuantumHistory::new(id.clone(), vec![id.clone()], id.clone()).unwrap();
        assert!(matches!(
            chain_operator(&h, &SegmentedEvolution::trivial(3, 1)),
            Err(HistoryError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            chain_operator(&h, &SegmentedEvolution::trivial(2, 2)),
            Err(HistoryError::ShapeMismatch { .. })
        ));
        assert!(QuantumHistory::new(id.clone(), vec![Projector::identity(3)], id).is_err());
    }

    #[test]
    fn amplitude_vanishes_for_orthogonal_post() {
        // Post-selection on |1⟩ after a chain that only reaches |0⟩.
        let fams = vec![ProjectorFamily::computational(2).unwrap()];
        let space = HistorySpace::new(TimeGrid::new(1), fams, ket0(), ket1()).unwrap();
        let ev = SegmentedEvolution::trivial(2, 1);
        let h = space.history(&HistoryIndex(vec![0])).unwrap();
        assert_eq!(history_amplitude(&h, &space, &ev).unwrap(), c(0.0));
    }

    #[test]
    fn trivial_space_sum_is_transition_amplitude() {
        let mut rng = rng_from_seed(5);
        let inst = random_instance(InstanceShape::fine(3, 0), &mut rng);
        let direct = inst.space.post_state().inner(&inst.evolution.total().apply(inst.space.pre_state()));
        let sum = feynman_sum(&inst.space, &inst.evolution, false).unwrap();
        assert!((sum - direct).norm() < 1e-14);
    }

    #[test]
    fn dense_unitaries_make_every_history_continuous() {
        let mut rng = rng_from_seed(6);
        let inst = random_instance(InstanceShape::fine(3, 2), &mut rng);
        let adj = AdjacencyMap::build(&inst.space, &inst.evolution).unwrap();
        for idx in enumerate_histories(&inst.space).unwrap() {
            assert!(is_continuous(&idx, &adj));
        }
        assert_eq!(continuous_histories(&inst.space, &adj).len(), 9);
    }

    #[test]
    fn continuity_blocks_disconnected_path() {
        // Identity segments: only the |0⟩,|0⟩ path connects pre=|0⟩ to post=|0⟩.
        let space = basis_space(2, 2);
        let adj = AdjacencyMap::build(&space, &SegmentedEvolution::trivial(2, 2)).unwrap();
        assert!(is_continuous(&HistoryIndex(vec![0, 0]), &adj));
        assert!(!is_continuous(&HistoryIndex(vec![0, 1]), &adj));
        assert!(!is_continuous(&HistoryIndex(vec![1, 1]), &adj));
        assert_eq!(continuous_histories(&space, &adj), vec![HistoryIndex(vec![0, 0])]);
    }

    #[test]
    fn orthogonality_cases() {
        let space = basis_space(2, 2);
        let a = space.history(&HistoryIndex(vec![0, 1])).unwrap();
        let b = space.history(&HistoryIndex(vec![0, 0])).unwrap();
        assert!(histories_orthogonal(&a, &b).unwrap());
        assert!(!histories_orthogonal(&a, &a).unwrap());
        // Coarse: identity at slot 2 versus fine: |0⟩⟨0| there.
        let coarse = QuantumHistory::new(
            space.pre_projector().clone(),
            vec![Projector::basis(2, 0).unwrap(), Projector::identity(2)],
            space.post_projector().clone(),
        )
        .unwrap();
        assert!(!histories_orthogonal(&coarse, &b).unwrap());
        // Tr[P0 P0]·Tr[P0 P0]·Tr[I P0]·Tr[P0 P0] = 1.
        assert!((history_overlap(&coarse, &b).unwrap() - c(1.0)).norm() < 1e-15);
        let short = QuantumHistory::new(Projector::identity(2), vec![], Projector::identity(2)).unwrap();
        assert!(matches!(histories_orthogonal(&a, &short), Err(HistoryError::ShapeMismatch { .. })));
    }

    #[test]
    fn serial_and_tree_reductions_agree() {
        let mut rng = rng_from_seed(7);
        let inst = random_instance(InstanceShape::fine(4, 4), &mut rng);
        let s = sum_amplitudes(&inst.space, &inst.evolution, false, Reduction::Serial).unwrap();
        let t = sum_amplitudes(&inst.space, &inst.evolution, false, Reduction::PairwiseTree).unwrap();
        assert!((s - t).norm() < 1e-12);
    }

    #[test]
    fn tree_reduction_is_thread_count_independent() {
        let mut rng = rng_from_seed(8);
        let inst = random_instance(InstanceShape::fine(3, 6), &mut rng);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| feynman_sum(&inst.space, &inst.evolution, false).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.re.to_bits(), four.re.to_bits());
        assert_eq!(one.im.to_bits(), four.im.to_bits());
    }

    #[test]
    fn evolution_spans() {
        let ev = SegmentedEvolution::new(vec![hadamard(), pauli_x(), pauli_z()]).unwrap();
        assert!(ev.between(1, 1).unwrap().max_abs_diff(&Operator::identity(2)) < 1e-15);
        let expected = pauli_z().mul(&pauli_x()).mul(&hadamard());
        assert!(ev.total().max_abs_diff(&expected) < 1e-15);
        assert!(ev.between(2, 1).is_err());
        assert!(ev.between(0, 4).is_err());
        assert!(SegmentedEvolution::new(vec![Operator::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()]).is_err());
        assert_eq!(TimeGrid::new(2).label(3).unwrap().to_string(), "t_f");
        assert_eq!(TimeGrid::new(2).label(1).unwrap().to_string(), "t_1");
    }
}
