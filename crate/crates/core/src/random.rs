//! Seeded random instances: states, unitaries, Hermitian observables,
//! projector families and whole history spaces.
//!
//! Everything draws from [`InstanceRng`] so a seed reproduces a run exactly.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::histories::{HistorySpace, SegmentedEvolution, TimeGrid};
use crate::pointer::PointerInstance;
use crate::weakvalues::TimedOperator;
use crate::linalg::{validate_family, Operator, Projector, ProjectorFamily, StateVector};

/// The generator behind every random instance.
pub type InstanceRng = ChaCha8Rng;

pub const GENERATOR_NAME: &str = "ChaCha8";

pub fn rng_from_seed(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_c64<R: Rng>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-distributed pure state.
pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> StateVector {
    loop {
        let v: Vec<C64> = (0..n).map(|_| gaussian_c64(rng)).collect();
        if let Ok(s) = StateVector::normalized(v) {
            return s;
        }
    }
}

/// Haar-distributed unitary via QR of a complex Ginibre matrix with the
/// diagonal phase correction.
pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> Operator {
    let z = DMatrix::from_fn(n, n, |_, _| gaussian_c64(rng));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    Operator::from_matrix(q).expect("finite unitary")
}

/// Unitary with structural zeros: a random permutation with random phases,
/// mixed by a random 2x2 unitary on one pair of basis states (when `n ≥ 2`).
pub fn random_sparse_unitary<R: Rng>(n: usize, rng: &mut R) -> Operator {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut m = DMatrix::<C64>::zeros(n, n);
    for (col, &row) in perm.iter().enumerate() {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        m[(row, col)] = C64::from_polar(1.0, theta);
    }
    if n >= 2 {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mix = random_unitary(2, rng);
        let mut embed = DMatrix::<C64>::identity(n, n);
        embed[(a, a)] = mix.get(0, 0);
        embed[(a, b)] = mix.get(0, 1);
        embed[(b, a)] = mix.get(1, 0);
        embed[(b, b)] = mix.get(1, 1);
        m = embed * m;
    }
    Operator::from_matrix(m).expect("finite unitary")
}

/// Hermitian matrix with entries of order one, scaled so the spectral
/// radius is at most `radius`.
pub fn random_hermitian<R: Rng>(n: usize, radius: f64, rng: &mut R) -> Operator {
    let z = DMatrix::from_fn(n, n, |_, _| gaussian_c64(rng));
    let h = (&z + z.adjoint()).unscale(2.0);
    let op = Operator::from_matrix(h).expect("finite");
    let spec = crate::linalg::spectral_decompose(&op).expect("hermitian");
    let r = spec.max_abs_eigenvalue();
    if r == 0.0 {
        op
    } else {
        op.scale(C64::new(radius / r, 0.0))
    }
}

/// Complete family of projectors built from a random orthonormal basis.
/// Basis vectors are grouped into `members` projectors (each of rank ≥ 1).
pub fn random_family<R: Rng>(n: usize, members: usize, rng: &mut R) -> ProjectorFamily {
    assert!(members >= 1 && members <= n, "member count must be in 1..=n");
    let u = random_unitary(n, rng);
    let m = u.matrix();
    // Split n basis vectors into `members` non-empty contiguous groups.
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(members - 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);
    let projectors = bounds
        .windows(2)
        .map(|w| {
            let mut p = DMatrix::<C64>::zeros(n, n);
            for j in w[0]..w[1] {
                let v = m.column(j);
                p += &v * v.adjoint();
            }
            let op = Operator::from_matrix(p).expect("finite");
            crate::linalg::validate_projector(op).expect("projector from orthonormal columns")
        })
        .collect::<Vec<Projector>>();
    validate_family(projectors).expect("complete by construction")
}

/// A random history problem: families, unitary segments and pre/post
/// states whose transition amplitude is at least `min_overlap` in modulus.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub space: HistorySpace,
    pub evolution: SegmentedEvolution,
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub dim: usize,
    pub intermediate_count: usize,
    /// Use rank-1 families (fine-grained) or random coarser groupings.
    pub fine_grained: bool,
    pub sparse_unitaries: bool,
    pub min_overlap: f64,
}

impl InstanceShape {
    pub fn fine(dim: usize, k: usize) -> Self {
        Self { dim, intermediate_count: k, fine_grained: true, sparse_unitaries: false, min_overlap: 0.05 }
    }
}

pub fn random_instance<R: Rng>(shape: InstanceShape, rng: &mut R) -> RandomInstance {
    let n = shape.dim;
    let k = shape.intermediate_count;
    let families: Vec<ProjectorFamily> = (0..k)
        .map(|_| {
            let members = if shape.fine_grained { n } else { rng.random_range(1..=n) };
            random_family(n, members, rng)
        })
        .collect();
    let segments: Vec<Operator> = (0..=k)
        .map(|_| {
            if shape.sparse_unitaries {
                random_sparse_unitary(n, rng)
            } else {
                random_unitary(n, rng)
            }
        })
        .collect();
    let evolution = SegmentedEvolution::new(segments).expect("unitary by construction");
    let total = evolution.total();
    let (pre, post) = loop {
        let pre = random_state(n, rng);
        let post = random_state(n, rng);
        if post.inner(&total.apply(&pre)).norm() >= shape.min_overlap {
            break (pre, post);
        }
    };
    let space = HistorySpace::new(TimeGrid::new(k), families, pre, post).expect("consistent shape");
    RandomInstance { space, evolution }
}

/// Random pointer experiment on an `n`-level system: one observable per
/// meter, coupled at consecutive times, with spectral radius `radius`.
/// Segments are random unitaries when `free_evolution` is set and the
/// identity otherwise. Pre/post states are resampled until
/// `|⟨ψ_f|T|ψ_i⟩| ≥ min_overlap`.
pub fn random_pointer_instance<R: Rng>(
    n: usize,
    meters: usize,
    radius: f64,
    min_overlap: f64,
    free_evolution: bool,
    rng: &mut R,
) -> PointerInstance {
    let evolution = if free_evolution {
        SegmentedEvolution::new((0..=meters).map(|_| random_unitary(n, rng)).collect()).expect("unitary")
    } else {
        SegmentedEvolution::trivial(n, meters)
    };
    let observables: Vec<TimedOperator> =
        (1..=meters).map(|at| TimedOperator::new(at, random_hermitian(n, radius, rng))).collect();
    let total = evolution.total();
    let (pre, post) = loop {
        let pre = random_state(n, rng);
        let post = random_state(n, rng);
        if post.inner(&total.apply(&pre)).norm() >= min_overlap {
            break (pre, post);
        }
    };
    PointerInstance::new(pre, post, evolution, observables).expect("valid by construction")
}
