//! Estimators over truncated samples.
//!
//! Every operation here maps a [`SampleSet`] (plus parameters) to an
//! [`EstimatorReport`]; all are pure functions of their inputs, so trials can
//! run in parallel.
//!
//! The workhorse deviation scale is `sqrt(3 ln n / n)`: a Bernoulli column
//! mean over `n` draws stays within it with probability at least
//! `1 - 2/n^6`, which is summable enough that scans over `n` coordinates and
//! over candidate lists stay reliable simultaneously.

use crate::families::{CoverEnumerator, Family, FamilyError, SampleSet, THIRD, TWO_THIRDS};
use crate::meanvec::{BallConstraint, MeanVecError, MeanVector};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(
        "no cover candidate accepted ({} after scanning {scanned} candidates)",
        if *.exhausted { "enumeration exhausted" } else { "budget spent" }
    )]
    NoCandidateAccepted { scanned: u64, exhausted: bool },
    #[error("ball intersection already empty at the first refinement round")]
    EmptyAtFirstRound,
    #[error("sample rows disagree at coordinate {coordinate}, which the family fixes")]
    InconsistentRows { coordinate: u64 },
    #[error("no branch scored above 1/2 (best average {phi:.4})")]
    NoBranchAccepted { phi: f64 },
    #[error("invalid estimator parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    MeanVec(#[from] MeanVecError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// The per-coordinate deviation allowance `sqrt(3 ln n / n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub n: usize,
    pub value: f64,
}

impl Threshold {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        Threshold {
            n,
            value: (3.0 * nf.ln() / nf).sqrt(),
        }
    }
}

/// What an estimator did, alongside its estimate.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// 1-based index of the accepted candidate in the cover enumeration;
    /// `None` when the mixed-radix index overflows.
    pub candidate_index_accepted: Option<u128>,
    /// Number of candidates the scan actually examined.
    pub candidates_scanned: u64,
    /// Last refinement round whose ball intersection stayed nonempty.
    pub k_reached: Option<u32>,
    /// Recovered branch bits, for the tree estimator.
    pub branch_bits: Option<String>,
    /// Depth-averaged score of the winning branch.
    pub phi: Option<f64>,
    /// Largest coordinate the estimate is certified on; `None` means the
    /// estimate is structurally exact on every coordinate.
    pub valid_to: Option<u64>,
    /// Free-form events worth keeping (budget exhaustion, fallbacks).
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct EstimatorReport {
    pub estimate: MeanVector,
    pub diagnostics: Diagnostics,
    /// Ball constraints accumulated by the chaining estimators, all satisfied
    /// by `estimate`. Empty for single-shot estimators.
    pub constraints: Vec<BallConstraint>,
}

impl EstimatorReport {
    fn new(estimate: MeanVector, diagnostics: Diagnostics) -> Self {
        EstimatorReport {
            estimate,
            diagnostics,
            constraints: Vec::new(),
        }
    }
}

/// Coordinate-wise sample averages as an explicit prefix.
///
/// The tail value 0 is a placeholder, not an estimate: nothing beyond the
/// sample horizon has been observed, and consumers must treat the result as
/// valid only up to `s.horizon()`. (The wrapping [`EstimatorReport`]s carry
/// that limit in `diagnostics.valid_to`.)
pub fn empirical_mean(s: &SampleSet) -> MeanVector {
    MeanVector::explicit(s.empirical_prefix(), 0.0).expect("column means lie in [0,1]")
}

/// Scans the cover stream and returns the first candidate whose first
/// `n - 1` coordinates all stay within `sqrt(3 ln n / n) + epsilon` of the
/// empirical mean.
///
/// For grid covers the scan is resolved analytically: acceptance tests each
/// coordinate separately, so the first acceptable candidate in enumeration
/// order picks, coordinate by coordinate, the first grid value the window
/// admits (oracle-tested against the literal stream scan). `max_candidates`
/// bounds the candidates a listed scan may examine.
pub fn eps_approximate(
    cover: &mut CoverEnumerator,
    s: &SampleSet,
    epsilon: f64,
    max_candidates: u64,
) -> Result<EstimatorReport, EstimatorError> {
    if epsilon < 0.0 || epsilon.is_nan() {
        return Err(EstimatorError::InvalidParams(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    let n = s.rows();
    if s.horizon() < n as u64 {
        return Err(EstimatorError::InvalidParams(format!(
            "sample horizon {} is below the row count {n}; the scan tests the first n coordinates",
            s.horizon()
        )));
    }
    let tol = Threshold::new(n).value + epsilon;
    let qhat = s.empirical_prefix();
    let j_max = n.saturating_sub(1) as u64;

    let (candidate, index, scanned) = match cover {
        CoverEnumerator::Grid(grid) => {
            // Coordinates past the grid prefix take the tail value on every
            // candidate; if one of them fails the test, nothing is
            // acceptable.
            let tail = grid.tail_value();
            for j in (grid.prefix_len() + 1)..=j_max {
                if (tail - qhat[j as usize - 1]).abs() > tol {
                    return Err(EstimatorError::NoCandidateAccepted {
                        scanned: 0,
                        exhausted: true,
                    });
                }
            }
            let windows: Vec<(f64, f64)> = (1..=j_max.min(grid.prefix_len()))
                .map(|j| {
                    let q = qhat[j as usize - 1];
                    (q - tol, q + tol)
                })
                .collect();
            let choice =
                grid.first_acceptable(&windows)
                    .map_err(|_| EstimatorError::NoCandidateAccepted {
                        scanned: 0,
                        exhausted: true,
                    })?;
            (choice.candidate, choice.rank, 1)
        }
        other => {
            let mut scanned: u64 = 0;
            let mut found = None;
            while scanned < max_candidates {
                let Some(cand) = other.next_candidate() else {
                    return Err(EstimatorError::NoCandidateAccepted {
                        scanned,
                        exhausted: true,
                    });
                };
                scanned += 1;
                let mut ok = true;
                for j in 1..=j_max {
                    if (cand.coord(j)? - qhat[j as usize - 1]).abs() > tol {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(cand) => (cand, Some(u128::from(scanned)), scanned),
                None => {
                    return Err(EstimatorError::NoCandidateAccepted {
                        scanned,
                        exhausted: false,
                    })
                }
            }
        }
    };

    // The returned candidate must pass its own acceptance test.
    for j in 1..=j_max {
        if (candidate.coord(j)? - qhat[j as usize - 1]).abs() > tol {
            return Err(EstimatorError::Internal(format!(
                "accepted candidate violates its acceptance bound at coordinate {j}"
            )));
        }
    }

    Ok(EstimatorReport::new(
        candidate,
        Diagnostics {
            candidate_index_accepted: index,
            candidates_scanned: scanned,
            ..Diagnostics::default()
        },
    ))
}

/// Chains cover scans at tolerances `2^-k` and intersects the resulting
/// balls: round `k` accepts a candidate within `sqrt(3 ln n / n) + 2^-k` of
/// the empirical mean on the tested coordinates, constrains the family to the
/// ball of radius `2^-k` around it, and asks the family for a member of the
/// running intersection. Returns the member from the last round whose
/// intersection was still nonempty; stops at `k_max` regardless.
pub fn separable_learn(
    family: &Family,
    s: &SampleSet,
    k_max: u32,
    max_candidates: u64,
) -> Result<EstimatorReport, EstimatorError> {
    if k_max == 0 {
        return Err(EstimatorError::InvalidParams("k_max must be at least 1".into()));
    }
    let mut constraints: Vec<BallConstraint> = Vec::new();
    let mut member: Option<MeanVector> = None;
    let mut diag = Diagnostics::default();
    let mut k_reached = 0u32;

    for k in 1..=k_max {
        let eps_k = 0.5f64.powi(k as i32);
        let mut cover = family.cover(eps_k)?;
        let round = match eps_approximate(&mut cover, s, eps_k, max_candidates) {
            Ok(r) => r,
            Err(EstimatorError::NoCandidateAccepted { scanned, exhausted }) => {
                if k == 1 {
                    return Err(EstimatorError::NoCandidateAccepted { scanned, exhausted });
                }
                diag.notes
                    .push(format!("round {k}: no candidate accepted, stopping"));
                break;
            }
            Err(other) => return Err(other),
        };
        diag.candidates_scanned += round.diagnostics.candidates_scanned;
        constraints.push(BallConstraint::new(round.estimate, eps_k)?);
        match family.find_member_in_balls(&constraints, s.horizon())? {
            Some(m) => {
                member = Some(m);
                k_reached = k;
            }
            None => {
                if k == 1 {
                    return Err(EstimatorError::EmptyAtFirstRound);
                }
                // The newest ball emptied the intersection; the reported
                // member satisfies all earlier constraints.
                constraints.pop();
                diag.notes
                    .push(format!("round {k}: intersection empty, stopping"));
                break;
            }
        }
    }

    let estimate = member.ok_or(EstimatorError::EmptyAtFirstRound)?;
    diag.k_reached = Some(k_reached);
    Ok(EstimatorReport {
        estimate,
        diagnostics: diag,
        constraints,
    })
}

/// Binary-mean families are learned by reading any single draw: a coordinate
/// realizes 1 only when its mean is 1 and 0 only when its mean is 0.
pub fn bin_learn(s: &SampleSet) -> Result<EstimatorReport, EstimatorError> {
    for j in 1..=s.horizon() {
        let first = s.get(0, j);
        if let Some(i) = (1..s.rows()).find(|&i| s.get(i, j) != first) {
            debug_assert!(i > 0);
            return Err(EstimatorError::InconsistentRows { coordinate: j });
        }
    }
    let prefix: Vec<f64> = (1..=s.horizon()).map(|j| f64::from(s.get(0, j))).collect();
    let estimate = MeanVector::explicit(prefix, 0.0).expect("bits lie in [0,1]");
    Ok(EstimatorReport::new(
        estimate,
        Diagnostics {
            valid_to: Some(s.horizon()),
            ..Diagnostics::default()
        },
    ))
}

/// Round families couple coordinates in pairs: the even coordinate is the
/// 0/1 indicator of the odd one being 2/3, so a single draw reveals both.
pub fn round_learn(s: &SampleSet) -> Result<EstimatorReport, EstimatorError> {
    if !s.horizon().is_multiple_of(2) {
        return Err(EstimatorError::InvalidParams(format!(
            "round learning needs an even horizon, got {}",
            s.horizon()
        )));
    }
    let mut prefix = vec![0.0; s.horizon() as usize];
    for m in 1..=(s.horizon() / 2) {
        let even = 2 * m;
        let first = s.get(0, even);
        if (1..s.rows()).any(|i| s.get(i, even) != first) {
            return Err(EstimatorError::InconsistentRows { coordinate: even });
        }
        prefix[(even - 1) as usize] = f64::from(first);
        prefix[(even - 2) as usize] = if first { TWO_THIRDS } else { THIRD };
    }
    let estimate = MeanVector::explicit(prefix, 0.0).expect("round values lie in [0,1]");
    Ok(EstimatorReport::new(
        estimate,
        Diagnostics {
            valid_to: Some(s.horizon()),
            ..Diagnostics::default()
        },
    ))
}

/// Max-average root-to-depth path over per-node means: exact dynamic program
/// over the level-order tree. `node_means[label]` must be populated for
/// labels `1..2^(depth+1)`; entry 0 is ignored. The root is on every branch,
/// so the average runs over the `depth` nodes below it. Ties prefer the
/// lexicographically smaller bit string.
pub fn max_average_branch(node_means: &[f64], depth: u32) -> (Vec<bool>, f64) {
    assert!(depth >= 1, "need at least one level below the root");
    let total = 1usize << (depth + 1);
    assert!(node_means.len() >= total, "means must cover every label");

    let mut best = vec![0.0f64; total];
    let leaves = 1usize << depth;
    best[leaves..total].copy_from_slice(&node_means[leaves..total]);
    for d in (1..depth).rev() {
        for label in (1usize << d)..(1usize << (d + 1)) {
            let (l, r) = (2 * label, 2 * label + 1);
            let down = if best[l] >= best[r] { best[l] } else { best[r] };
            best[label] = node_means[label] + down;
        }
    }
    let mut bits = Vec::with_capacity(depth as usize);
    let mut label = if best[2] >= best[3] { 2 } else { 3 };
    let score = best[label];
    bits.push(label == 3);
    for _ in 1..depth {
        let (l, r) = (2 * label, 2 * label + 1);
        label = if best[l] >= best[r] { l } else { r };
        bits.push(label % 2 == 1);
    }
    (bits, score / f64::from(depth))
}

/// Branch recovery for tree-structured families: average the per-node
/// empirical means along every branch down to `depth` and return the branch
/// maximizing that average, provided it clears 1/2. On the marked branch the
/// average concentrates at 2/3; with at least 36 samples every other branch
/// stays at or below 1/2, which is what the threshold tests.
///
/// The returned branch vector is certified only on labels up to
/// `2^(depth+1) - 1`: bits below the examined depth are not identified by a
/// finite sample, and the all-left continuation is a representational
/// placeholder (flagged via `diagnostics.valid_to`).
pub fn tree_learn(s: &SampleSet, depth: u32) -> Result<EstimatorReport, EstimatorError> {
    if s.rows() < 36 {
        return Err(EstimatorError::InvalidParams(format!(
            "branch recovery needs at least 36 samples, got {}",
            s.rows()
        )));
    }
    if depth == 0 || depth > 26 {
        return Err(EstimatorError::InvalidParams(format!(
            "depth must be in 1..=26, got {depth}"
        )));
    }
    let labels = (1u64 << (depth + 1)) - 1;
    if s.horizon() < labels {
        return Err(EstimatorError::InvalidParams(format!(
            "horizon {} does not expose every label up to {labels}",
            s.horizon()
        )));
    }
    let mut node_means = vec![0.0f64; labels as usize + 1];
    for label in 1..=labels {
        node_means[label as usize] = s.column_mean(label);
    }
    let (bits, phi) = max_average_branch(&node_means, depth);
    if phi.is_nan() || phi <= 0.5 {
        return Err(EstimatorError::NoBranchAccepted { phi });
    }
    let branch_bits: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
    let estimate = MeanVector::tree_branch(bits, TWO_THIRDS, THIRD)?;
    Ok(EstimatorReport::new(
        estimate,
        Diagnostics {
            branch_bits: Some(branch_bits),
            phi: Some(phi),
            valid_to: Some(labels),
            ..Diagnostics::default()
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanvec::{first_violation, prefix_linf};

    #[test]
    fn threshold_values() {
        let t = Threshold::new(100);
        assert!((t.value - 0.3716922188849839).abs() < 1e-12);
        assert_eq!(Threshold::new(1).value, 0.0);
    }

    #[test]
    fn empirical_mean_basics() {
        let truth = MeanVector::explicit(vec![1.0, 1.0], 1.0).unwrap();
        let s = Family::Bin.sample(&truth, 5, 4, 1).unwrap();
        let qhat = empirical_mean(&s);
        for j in 1..=4 {
            assert_eq!(qhat.coord(j).unwrap(), 1.0);
        }

        // Two fair-coin rows disagreeing in column 1 average to exactly 1/2.
        let fair = MeanVector::constant(0.5).unwrap();
        let fam = Family::prop(1.0).unwrap();
        let split = (0u64..)
            .map(|seed| fam.sample(&fair, 2, 1, seed).unwrap())
            .find(|s| s.get(0, 1) != s.get(1, 1))
            .unwrap();
        assert_eq!(empirical_mean(&split).coord(1).unwrap(), 0.5);
    }

    #[test]
    fn empirical_mean_concentrates() {
        // Binomial tail: P(|mean - 2/3| > 0.02) at n = 10^4 is about
        // 2 exp(-2 * 10^4 * 0.02^2) ~ 6.7e-4, so 60 seeded trials virtually
        // never deviate; tolerate one.
        let truth = MeanVector::constant(TWO_THIRDS).unwrap();
        let fam = Family::Tert;
        let mut bad = 0;
        for seed in 0..60 {
            let s = fam.sample(&truth, 10_000, 1, seed).unwrap();
            if (s.column_mean(1) - TWO_THIRDS).abs() >= 0.02 {
                bad += 1;
            }
        }
        assert!(bad <= 1, "{bad} of 60 trials deviated");
    }

    #[test]
    fn scan_accepts_truth_and_rejects_far_candidate() {
        // Candidate list [far, truth]: at n = 100 the allowance is
        // sqrt(3 ln 100 / 100) ~ 0.3717, so a 0.9 gap at coordinate 1 gets
        // the far candidate rejected and the truth accepted.
        let truth = MeanVector::constant(0.05).unwrap();
        let far = MeanVector::explicit(vec![0.95], 0.05).unwrap();
        let fam = Family::countable(vec![far, truth.clone()]).unwrap();
        let s = fam.sample(&truth, 100, 128, 21).unwrap();
        let mut cover = fam.cover(0.0).unwrap();
        let rep = eps_approximate(&mut cover, &s, 0.0, 100).unwrap();
        assert_eq!(rep.diagnostics.candidate_index_accepted, Some(2));
        assert_eq!(prefix_linf(&rep.estimate, &truth, 128).unwrap(), 0.0);
    }

    #[test]
    fn singleton_list_is_accepted_at_index_one() {
        let truth = MeanVector::explicit(vec![0.3, 0.7], 0.5).unwrap();
        let fam = Family::countable(vec![truth.clone()]).unwrap();
        let s = fam.sample(&truth, 128, 128, 9).unwrap();
        let mut cover = fam.cover(0.0).unwrap();
        let rep = eps_approximate(&mut cover, &s, 0.0, 10).unwrap();
        assert_eq!(rep.diagnostics.candidate_index_accepted, Some(1));
        assert_eq!(prefix_linf(&rep.estimate, &truth, 128).unwrap(), 0.0);
    }

    #[test]
    fn chaining_flags_out_of_family_truth() {
        // Data from far outside the declared family: the first-round scan
        // rejects every candidate and the contract violation surfaces.
        let member = MeanVector::constant(0.05).unwrap();
        let fam = Family::countable(vec![member]).unwrap();
        let foreign = MeanVector::constant(0.95).unwrap();
        let s = Family::countable(vec![foreign.clone()])
            .unwrap()
            .sample(&foreign, 256, 256, 2)
            .unwrap();
        assert!(matches!(
            separable_learn(&fam, &s, 4, 100),
            Err(EstimatorError::NoCandidateAccepted { .. })
        ));
    }

    #[test]
    fn single_sample_accepts_first_candidate() {
        // n = 1: the test range j < 1 is empty, so the first candidate is
        // accepted unconditionally.
        let truth = MeanVector::constant(0.9).unwrap();
        let decoy = MeanVector::constant(0.1).unwrap();
        let fam = Family::countable(vec![decoy.clone(), truth.clone()]).unwrap();
        let s = fam.sample(&truth, 1, 4, 5).unwrap();
        let mut cover = fam.cover(0.0).unwrap();
        let rep = eps_approximate(&mut cover, &s, 0.0, 10).unwrap();
        assert_eq!(rep.diagnostics.candidate_index_accepted, Some(1));
        assert_eq!(rep.estimate.coord(1).unwrap(), 0.1);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let truth = MeanVector::constant(0.9).unwrap();
        let decoy = MeanVector::constant(0.1).unwrap();
        let fam = Family::countable(vec![decoy]).unwrap();
        let s = Family::Bin
            .sample(&MeanVector::constant(1.0).unwrap(), 64, 64, 2)
            .unwrap();
        let _ = truth;
        let mut cover = fam.cover(0.0).unwrap();
        let err = eps_approximate(&mut cover, &s, 0.0, 10).unwrap_err();
        assert!(matches!(
            err,
            EstimatorError::NoCandidateAccepted { exhausted: true, .. }
        ));
    }

    #[test]
    fn chaining_keeps_single_member() {
        let member = MeanVector::explicit(vec![0.3, 0.7], 0.5).unwrap();
        let fam = Family::countable(vec![member.clone()]).unwrap();
        let s = fam.sample(&member, 64, 64, 3).unwrap();
        let rep = separable_learn(&fam, &s, 6, 100).unwrap();
        assert_eq!(rep.diagnostics.k_reached, Some(6));
        assert_eq!(rep.constraints.len(), 6);
        assert_eq!(prefix_linf(&rep.estimate, &member, 64).unwrap(), 0.0);
        // Radii halve exactly.
        for (k, c) in rep.constraints.iter().enumerate() {
            assert_eq!(c.radius, 0.5f64.powi(k as i32 + 1));
        }
    }

    #[test]
    fn chaining_on_grid_family_tightens_with_n() {
        let fam = Family::prop(1.0).unwrap();
        let truth = fam.random_truth(12, 512);
        let mut errs = Vec::new();
        for n in [64usize, 512] {
            let s = fam.sample(&truth, n, n as u64, 77).unwrap();
            let rep = separable_learn(&fam, &s, 6, 1_000_000).unwrap();
            // The estimate satisfies every accumulated ball.
            for c in &rep.constraints {
                assert!(first_violation(&rep.estimate, &c.center, c.radius, 1 << 20)
                    .violation
                    .is_none());
            }
            errs.push(prefix_linf(&rep.estimate, &truth, n as u64).unwrap());
        }
        assert!(
            errs[1] < errs[0],
            "larger sample should tighten the estimate: {errs:?}"
        );
    }

    #[test]
    fn bin_learn_reads_the_truth_exactly() {
        let fam = Family::Bin;
        let truth = fam.random_truth(9, 33);
        let s = fam.sample(&truth, 4, 33, 4).unwrap();
        let rep = bin_learn(&s).unwrap();
        assert_eq!(prefix_linf(&rep.estimate, &truth, 33).unwrap(), 0.0);
        assert_eq!(rep.diagnostics.valid_to, Some(33));

        // A single coordinate also works.
        let one = fam.sample(&truth, 1, 1, 4).unwrap();
        let rep = bin_learn(&one).unwrap();
        assert_eq!(
            rep.estimate.coord(1).unwrap(),
            truth.coord(1).unwrap()
        );
    }

    #[test]
    fn round_learn_recovers_all_pairs() {
        let fam = Family::Round;
        let truth = fam.random_truth(5, 100);
        let s = fam.sample(&truth, 1, 100, 8).unwrap();
        let rep = round_learn(&s).unwrap();
        assert_eq!(prefix_linf(&rep.estimate, &truth, 100).unwrap(), 0.0);

        // Observed even coordinate forces the odd estimate.
        for m in 1..=50u64 {
            let even = rep.estimate.coord(2 * m).unwrap();
            let odd = rep.estimate.coord(2 * m - 1).unwrap();
            assert_eq!(odd, if even == 1.0 { TWO_THIRDS } else { THIRD });
        }
    }

    #[test]
    fn round_learn_rejects_odd_horizon_and_inconsistent_rows() {
        let fam = Family::Round;
        let truth = fam.random_truth(5, 100);
        let s = fam.sample(&truth, 2, 99, 8).unwrap();
        assert!(matches!(
            round_learn(&s),
            Err(EstimatorError::InvalidParams(_))
        ));
        // Rows from a fair coin disagree on even coordinates somewhere.
        let coin = Family::prop(1.0).unwrap();
        let s = coin
            .sample(&MeanVector::constant(0.5).unwrap(), 8, 100, 3)
            .unwrap();
        assert!(matches!(
            round_learn(&s),
            Err(EstimatorError::InconsistentRows { .. })
        ));
    }

    #[test]
    fn noiseless_branch_scores_are_exact() {
        // With exact node means the marked branch averages 2/3 exactly and
        // a branch diverging after t shared nodes averages
        // (t * 2/3 + (d - t)/3) / d < 2/3.
        let depth = 6u32;
        let truth_bits = vec![true, false, true, true, false, false];
        let truth = crate::meanvec::TreeBranch::new(truth_bits.clone(), TWO_THIRDS, THIRD).unwrap();
        let total = 1usize << (depth + 1);
        let mut means = vec![0.0; total];
        for label in 1..total as u64 {
            means[label as usize] = truth.value(label);
        }
        let (bits, phi) = max_average_branch(&means, depth);
        assert_eq!(bits, truth_bits);
        assert!((phi - TWO_THIRDS).abs() < 1e-15);

        // Hand-check the diverging-branch average for every split depth.
        for t in 0..depth {
            let expect = (f64::from(t) * TWO_THIRDS + f64::from(depth - t) * THIRD)
                / f64::from(depth);
            assert!(expect < TWO_THIRDS);
        }
    }

    #[test]
    fn branch_dp_matches_exhaustive_enumeration() {
        use rand::{Rng, SeedableRng};
        let depth = 10u32;
        let total = 1usize << (depth + 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let means: Vec<f64> = (0..total).map(|_| rng.random::<f64>()).collect();
        let (bits, phi) = max_average_branch(&means, depth);

        // Oracle: walk all 2^depth branches directly.
        let mut best = f64::NEG_INFINITY;
        let mut best_bits = Vec::new();
        for code in 0u32..(1 << depth) {
            let mut label = 1usize;
            let mut sum = 0.0;
            let mut cand = Vec::new();
            for d in 0..depth {
                let bit = (code >> (depth - 1 - d)) & 1 == 1;
                label = 2 * label + usize::from(bit);
                cand.push(bit);
                sum += means[label];
            }
            let avg = sum / f64::from(depth);
            if avg > best {
                best = avg;
                best_bits = cand;
            }
        }
        assert_eq!(bits, best_bits);
        assert!((phi - best).abs() < 1e-12);
    }

    #[test]
    fn branch_dp_breaks_ties_to_the_left() {
        // Two branches share depth-1 and differ only in the last bit, with
        // equal means: the smaller bit string wins.
        let depth = 3u32;
        let mut means = vec![0.0; 1 << (depth + 1)];
        means[2] = 1.0;
        means[4] = 1.0;
        means[8] = 0.7;
        means[9] = 0.7;
        let (bits, _) = max_average_branch(&means, depth);
        assert_eq!(bits, vec![false, false, false]);
    }

    #[test]
    fn tree_learn_recovers_a_seeded_branch() {
        let fam = Family::Tree { truth_depth: 20 };
        let truth = fam.random_truth(4, 1 << 11);
        let s = fam.sample(&truth, 100, (1 << 11) - 1, 6).unwrap();
        let rep = tree_learn(&s, 10).unwrap();
        let got = rep.diagnostics.branch_bits.unwrap();
        let want: String = match &truth {
            MeanVector::TreeBranch(b) => b.bits().iter().take(10).map(|&x| if x { '1' } else { '0' }).collect(),
            _ => unreachable!(),
        };
        assert_eq!(got, want);
        assert!(rep.diagnostics.phi.unwrap() > 0.5);
        assert_eq!(rep.diagnostics.valid_to, Some((1 << 11) - 1));
    }

    #[test]
    fn tree_learn_guards_its_preconditions() {
        let fam = Family::Tree { truth_depth: 8 };
        let truth = fam.random_truth(4, 256);
        let s = fam.sample(&truth, 35, 255, 6).unwrap();
        assert!(matches!(
            tree_learn(&s, 6),
            Err(EstimatorError::InvalidParams(_))
        ));
        let s = fam.sample(&truth, 40, 100, 6).unwrap();
        assert!(matches!(
            tree_learn(&s, 6),
            Err(EstimatorError::InvalidParams(_))
        ));
    }

    #[test]
    fn reports_are_deterministic() {
        let fam = Family::prop(1.0).unwrap();
        let truth = fam.random_truth(12, 128);
        let run = || {
            let s = fam.sample(&truth, 128, 128, 5).unwrap();
            separable_learn(&fam, &s, 5, 1000).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(prefix_linf(&a.estimate, &b.estimate, 256).unwrap(), 0.0);
        assert_eq!(a.diagnostics.k_reached, b.diagnostics.k_reached);
        assert_eq!(a.constraints.len(), b.constraints.len());
    }
}
