//! Uniform mean estimation over product distributions on infinite binary
//! sequences.
//!
//! A distribution `mu` on `{0,1}^N` is summarized by its mean vector
//! `q in [0,1]^N`, where `q_j` is the expectation of coordinate `j`. Given a
//! *collection* of such distributions and `n` i.i.d. samples from one unknown
//! member, the goal is an estimate `q~` whose worst coordinate error
//! `sup_j |q~_j - q_j|` vanishes in expectation as `n` grows, uniformly over
//! the collection.
//!
//! The empirical mean fails at this even for the singleton collection
//! `{Prod(1/2, 1/2, ...)}`: among infinitely many coordinates, some column of
//! any finite sample is constant almost surely, pinning the sup-norm error at
//! one half. The estimators here get around that by exploiting structure in
//! the collection rather than trusting per-coordinate averages everywhere:
//!
//! * [`estimators::eps_approximate`] scans a countable cover of the
//!   collection's mean vectors and keeps the first candidate consistent with
//!   the sample on the tested coordinates;
//! * [`estimators::separable_learn`] chains cover scans at halving tolerances
//!   and intersects the resulting sup-norm balls;
//! * [`estimators::bin_learn`], [`estimators::round_learn`] read determined
//!   coordinates directly off a single sample;
//! * [`estimators::tree_learn`] recovers the marked branch of a tree-structured
//!   collection by maximizing a depth-averaged score;
//! * [`union::union_learn`] aggregates a countable list of base learners with
//!   a pairwise survival tournament, again chaining balls.
//!
//! [`harness`] runs seeded Monte Carlo sweeps of all of the above and writes
//! deterministic CSV/JSON reports; the `unimean` binary exposes it on the
//! command line.
//!
//! ```
//! use unimean::families::Family;
//! use unimean::estimators::{empirical_mean, eps_approximate};
//!
//! // A two-member collection: scanning its 0-cover finds the truth exactly.
//! let far = unimean::meanvec::MeanVector::explicit(vec![0.9, 0.1], 0.5).unwrap();
//! let truth = unimean::meanvec::MeanVector::explicit(vec![0.1, 0.9], 0.5).unwrap();
//! let family = Family::countable(vec![far, truth.clone()]).unwrap();
//!
//! let sample = family.sample(&truth, 128, 128, 7).unwrap();
//! let mut cover = family.cover(0.0).unwrap();
//! let report = eps_approximate(&mut cover, &sample, 0.0, 1000).unwrap();
//! assert_eq!(report.diagnostics.candidate_index_accepted, Some(2));
//!
//! // The empirical mean of column 1 is near 0.1 but not exactly 0.1.
//! let qhat = empirical_mean(&sample);
//! assert!((qhat.coord(1).unwrap() - 0.1).abs() < 0.15);
//! ```

pub mod estimators;
pub mod families;
pub mod harness;
pub mod meanvec;
pub mod union;

// The guide's code blocks double as doc-tests so the book cannot drift from
// the library. (mdBook itself cannot run example blocks against the crate;
// `cargo test --doc` can.)
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mean-vectors.md")]
    mod mean_vectors {}
    #[doc = include_str!("../../../book/src/families.md")]
    mod families {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/survival-and-unions.md")]
    mod survival_and_unions {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
