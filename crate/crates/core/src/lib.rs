//! Finite coarse-grained quantum histories, Feynman sums and sequential weak
//! values, with a Gaussian-pointer laboratory that checks the weak values
//! against simulated pointer statistics.

pub mod histories;
pub mod linalg;
pub mod netparse;
pub mod pointer;
pub mod random;
pub mod suites;
pub mod weakvalues;

pub use num_complex::Complex64 as C64;
