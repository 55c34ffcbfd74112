//! Aggregating a countable list of base learners.
//!
//! Given `2n` samples from a distribution known only to lie in a countable
//! union of collections, split them in half: run the first `n` registered
//! learners on the training half to get candidate estimates
//! `q~^1, ..., q~^m`, and compute the empirical mean `q^` of the validation
//! half. A candidate `i` then plays a tournament against every candidate `t`
//! at tolerance `eps`:
//!
//! * if `|q~^t_j - q~^i_j| <= 4 eps` at every coordinate, `i` wins the round
//!   outright (the two candidates are indistinguishable at this scale);
//! * otherwise, at the first disagreeing coordinate `J`, `i` wins exactly
//!   when the validation mean backs it up:
//!   `|q^_J - q~^i_J| < eps + sqrt(3 ln n / n)`.
//!
//! A candidate that wins against all `m` opponents "survives". A survivor is
//! a `5 eps`-approximation of the truth with high probability, so the
//! meta-learner chains survivors at `eps_k = 2^-k` and intersects balls of
//! radius `5 eps_k`, returning a member of the last nonempty intersection
//! (within `10 eps_K` of the truth for the deepest reliable round `K`).

use serde::Serialize;
use thiserror::Error;

use crate::estimators::{
    bin_learn, empirical_mean, eps_approximate, round_learn, separable_learn, tree_learn,
    Diagnostics, EstimatorError, EstimatorReport, Threshold,
};
use crate::families::{Family, FamilyError, MemberSpec, SampleSet};
use crate::meanvec::{BallConstraint, Certainty, MeanVecError, MeanVector, ViolationScan};

#[derive(Debug, Error)]
pub enum UnionError {
    #[error("no learner survived the first tournament round")]
    NoSurvivorAtFirstRound,
    #[error("the first round's ball intersection was already empty")]
    EmptyAtFirstRound,
    #[error(
        "tournament coordinate {coordinate} is beyond the validation horizon {horizon}; \
         the win condition cannot be evaluated"
    )]
    HorizonExceeded { coordinate: u64, horizon: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    MeanVec(#[from] MeanVecError),
}

/// A base learner's estimate entering the tournament. `valid_to` caps the
/// coordinates the estimate actually certifies (estimates read off truncated
/// samples carry placeholder tails beyond their horizon).
#[derive(Clone, Debug)]
pub struct CandidateEstimate {
    pub vector: MeanVector,
    pub valid_to: Option<u64>,
    pub learner: String,
}

/// Outcome of one survival test.
#[derive(Clone, Debug, Serialize)]
pub struct SurvivalVerdict {
    pub passed: bool,
    pub wins: usize,
    pub first_failure_opponent: Option<usize>,
    pub first_failure_coordinate: Option<u64>,
    /// `false` when some pairwise comparison was capped at a validity
    /// horizon rather than resolved over all coordinates.
    pub exact: bool,
}

/// Violation scan between two candidates, honoring their validity horizons:
/// full analytic comparison only when both estimates certify every
/// coordinate.
fn candidate_violation(
    a: &CandidateEstimate,
    b: &CandidateEstimate,
    threshold: f64,
    horizon: u64,
) -> ViolationScan {
    let cap = match (a.valid_to, b.valid_to) {
        (None, None) => None,
        (x, y) => Some(x.unwrap_or(u64::MAX).min(y.unwrap_or(u64::MAX))),
    };
    match cap {
        None => crate::meanvec::first_violation(&a.vector, &b.vector, threshold, horizon),
        Some(cap) => {
            let cap = cap.min(horizon);
            for j in 1..=cap {
                let (va, vb) = match (a.vector.coord(j), b.vector.coord(j)) {
                    (Ok(va), Ok(vb)) => (va, vb),
                    _ => break,
                };
                if (va - vb).abs() > threshold {
                    return ViolationScan {
                        violation: Some(j),
                        certainty: Certainty::Exact,
                    };
                }
            }
            ViolationScan {
                violation: None,
                certainty: Certainty::HorizonLimited,
            }
        }
    }
}

/// Runs candidate `i`'s tournament at tolerance `epsilon` against all
/// candidates, using the validation empirical mean `qhat` (certified up to
/// `qhat_horizon`) and the sample size `n_samples` for the deviation
/// allowance. Passing requires a win against every candidate, itself
/// included (that one is free: zero deviation everywhere).
pub fn survival_test(
    i: usize,
    epsilon: f64,
    n_samples: usize,
    candidates: &[CandidateEstimate],
    qhat: &MeanVector,
    qhat_horizon: u64,
    horizon: u64,
) -> Result<SurvivalVerdict, UnionError> {
    if i >= candidates.len() {
        return Err(UnionError::InvalidParams(format!(
            "candidate index {i} out of range ({} candidates)",
            candidates.len()
        )));
    }
    let me = &candidates[i];
    let allowance = epsilon + Threshold::new(n_samples).value;
    let mut wins = 0;
    let mut exact = true;
    let mut first_failure = None;
    for (t, other) in candidates.iter().enumerate() {
        let scan = candidate_violation(other, me, 4.0 * epsilon, horizon);
        if scan.certainty == Certainty::HorizonLimited {
            exact = false;
        }
        match scan.violation {
            None => wins += 1,
            Some(coordinate) => {
                if coordinate > qhat_horizon {
                    return Err(UnionError::HorizonExceeded {
                        coordinate,
                        horizon: qhat_horizon,
                    });
                }
                let backing = (qhat.coord(coordinate)? - me.vector.coord(coordinate)?).abs();
                if backing < allowance {
                    wins += 1;
                } else if first_failure.is_none() {
                    first_failure = Some((t, coordinate));
                }
            }
        }
    }
    Ok(SurvivalVerdict {
        passed: wins == candidates.len(),
        wins,
        first_failure_opponent: first_failure.map(|(t, _)| t),
        first_failure_coordinate: first_failure.map(|(_, j)| j),
        exact,
    })
}

/// One line of the tournament log: the verdict of candidate `i` at round `k`.
#[derive(Clone, Debug, Serialize)]
pub struct VerdictRecord {
    pub k: u32,
    pub epsilon: f64,
    pub i: usize,
    pub learner: String,
    #[serde(flatten)]
    pub verdict: SurvivalVerdict,
}

/// Everything [`union_learn`] produced: the estimate report plus the full
/// tournament log (emitted as JSON lines by the CLI).
#[derive(Debug)]
pub struct UnionOutcome {
    pub report: EstimatorReport,
    pub verdicts: Vec<VerdictRecord>,
    /// Candidates the tournament ran over, in registry order.
    pub candidates: Vec<CandidateEstimate>,
}

/// Default chaining depth: the observable part of the analysis schedule,
/// floored at one round so the meta-learner always chains at desk scale
/// (the raw formula is 0 for n below ~24000).
pub fn default_k_cap(n: usize) -> u32 {
    let raw = ((n as f64 / 9.0).ln() / 4.0).floor();
    if raw >= 1.0 {
        raw as u32
    } else {
        1
    }
}

/// The meta-learner over a registry of base learners.
///
/// Splits the `2n` rows in half (first half trains the learners, second half
/// validates), then for `k = 1, 2, ...` runs the survival tournament at
/// `eps_k = 2^-k`, takes the first passing learner, constrains the union
/// family to the ball of radius `5 eps_k` around its candidate, and returns
/// a member of the last nonempty intersection. Stops when no learner passes,
/// when the intersection empties, or at `k_cap`.
pub fn union_learn(
    registry: &LearnerRegistry,
    union_family: &Family,
    full_sample: &SampleSet,
    k_cap: Option<u32>,
) -> Result<UnionOutcome, UnionError> {
    if !full_sample.rows().is_multiple_of(2) || full_sample.rows() == 0 {
        return Err(UnionError::InvalidParams(format!(
            "need an even, positive row count to split; got {}",
            full_sample.rows()
        )));
    }
    if registry.entries.is_empty() {
        return Err(UnionError::InvalidParams("registry is empty".into()));
    }
    let (train, validate) = full_sample.split_half();
    let n = train.rows();
    let horizon = full_sample.horizon();
    let k_cap = k_cap.unwrap_or_else(|| default_k_cap(n));

    let mut notes = Vec::new();
    let m = registry.entries.len().min(n);
    let mut candidates = Vec::with_capacity(m);
    for entry in registry.entries.iter().take(m) {
        match entry.learn(&train) {
            Ok(rep) => candidates.push(CandidateEstimate {
                vector: rep.estimate,
                valid_to: rep.diagnostics.valid_to,
                learner: entry.name.clone(),
            }),
            Err(err) => {
                // Keep the tournament total: a failed learner fields a fixed
                // member of its own family, which the tournament can then
                // eliminate on its merits.
                notes.push(format!("learner {} failed ({err}); family fallback", entry.name));
                candidates.push(CandidateEstimate {
                    vector: entry.family.any_member(),
                    valid_to: None,
                    learner: format!("{}(fallback)", entry.name),
                });
            }
        }
    }
    let qhat = empirical_mean(&validate);
    let qhat_horizon = validate.horizon();

    let mut constraints: Vec<BallConstraint> = Vec::new();
    let mut member: Option<MeanVector> = None;
    let mut verdicts = Vec::new();
    let mut k_reached = 0u32;

    for k in 1..=k_cap {
        let eps_k = 0.5f64.powi(k as i32);
        let mut survivor = None;
        for i in 0..candidates.len() {
            let verdict = survival_test(i, eps_k, n, &candidates, &qhat, qhat_horizon, horizon)?;
            let passed = verdict.passed;
            verdicts.push(VerdictRecord {
                k,
                epsilon: eps_k,
                i,
                learner: candidates[i].learner.clone(),
                verdict,
            });
            if passed {
                survivor = Some(i);
                break;
            }
        }
        let Some(i) = survivor else {
            if k == 1 {
                return Err(UnionError::NoSurvivorAtFirstRound);
            }
            notes.push(format!("round {k}: no survivor, stopping"));
            break;
        };
        constraints.push(BallConstraint::new(
            candidates[i].vector.clone(),
            5.0 * eps_k,
        )?);
        match union_family.find_member_in_balls(&constraints, horizon)? {
            Some(mm) => {
                member = Some(mm);
                k_reached = k;
            }
            None => {
                if k == 1 {
                    return Err(UnionError::EmptyAtFirstRound);
                }
                constraints.pop();
                notes.push(format!("round {k}: intersection empty, stopping"));
                break;
            }
        }
    }

    let estimate = member.ok_or(UnionError::EmptyAtFirstRound)?;
    // Estimates assembled from horizon-limited candidates inherit the cap.
    let valid_to = match &estimate {
        MeanVector::Closure { horizon_hint, .. } if *horizon_hint < u64::MAX => Some(*horizon_hint),
        _ => None,
    };
    let report = EstimatorReport {
        estimate,
        diagnostics: Diagnostics {
            k_reached: Some(k_reached),
            valid_to,
            notes,
            ..Diagnostics::default()
        },
        constraints,
    };
    Ok(UnionOutcome {
        report,
        verdicts,
        candidates,
    })
}

/// Ordered registry of base learners: entry `i` is the algorithm for the
/// `i`-th constituent of the union. The order is part of the contract
/// (scans take the first passing learner).
pub struct LearnerRegistry {
    pub entries: Vec<RegistryEntry>,
}

impl LearnerRegistry {
    pub fn new(entries: Vec<RegistryEntry>) -> Self {
        LearnerRegistry { entries }
    }

    /// The union family the registry is bound to (constituents in registry
    /// order).
    pub fn union_family(&self) -> Result<Family, FamilyError> {
        Family::union(self.entries.iter().map(|e| e.family.clone()).collect())
    }
}

pub struct RegistryEntry {
    pub name: String,
    pub family: Family,
    pub learner: LearnerKind,
}

/// The base learners a registry can field.
pub enum LearnerKind {
    /// Cover scan over the bound family at a fixed tolerance (tolerance 0
    /// for countable families).
    CoverScan { epsilon: f64, max_candidates: u64 },
    /// Ball-chaining over a separable bound family.
    Chained { k_max: Option<u32>, max_candidates: u64 },
    Bin,
    Round,
    Tree { depth: u32 },
    /// Always answers the same vector; useful as a fixture and as the
    /// simplest possible expert.
    Constant(MeanVector),
    Empirical,
}

impl RegistryEntry {
    pub fn learn(&self, s: &SampleSet) -> Result<EstimatorReport, EstimatorError> {
        match &self.learner {
            LearnerKind::CoverScan {
                epsilon,
                max_candidates,
            } => {
                let mut cover = self.family.cover(*epsilon)?;
                eps_approximate(&mut cover, s, *epsilon, *max_candidates)
            }
            LearnerKind::Chained {
                k_max,
                max_candidates,
            } => {
                let k = k_max.unwrap_or_else(|| (s.rows() as f64).log2().ceil().max(1.0) as u32);
                separable_learn(&self.family, s, k, *max_candidates)
            }
            LearnerKind::Bin => bin_learn(s),
            LearnerKind::Round => round_learn(s),
            LearnerKind::Tree { depth } => tree_learn(s, *depth),
            LearnerKind::Constant(v) => Ok(EstimatorReport {
                estimate: v.clone(),
                diagnostics: Diagnostics::default(),
                constraints: Vec::new(),
            }),
            LearnerKind::Empirical => {
                let estimate = empirical_mean(s);
                Ok(EstimatorReport {
                    estimate,
                    diagnostics: Diagnostics {
                        valid_to: Some(s.horizon()),
                        ..Diagnostics::default()
                    },
                    constraints: Vec::new(),
                })
            }
        }
    }
}

/// Serializable registry entry (the on-disk registry format).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LearnerConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: LearnerSpecConfig,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LearnerSpecConfig {
    Countable {
        members: Vec<MemberSpec>,
        #[serde(default)]
        epsilon: f64,
    },
    Bin {},
    Round {},
    Tree {
        depth: u32,
    },
    Constant {
        member: MemberSpec,
    },
    Qprop {
        c: f64,
        #[serde(default)]
        k_max: Option<u32>,
    },
}

impl LearnerConfig {
    pub fn to_entry(&self, index: usize) -> Result<RegistryEntry, FamilyError> {
        let (family, learner, default_name) = match &self.spec {
            LearnerSpecConfig::Countable { members, epsilon } => {
                let vs = members
                    .iter()
                    .map(MemberSpec::to_mean_vector)
                    .collect::<Result<Vec<_>, _>>()?;
                (
                    Family::countable(vs)?,
                    LearnerKind::CoverScan {
                        epsilon: *epsilon,
                        max_candidates: 1_000_000,
                    },
                    "countable",
                )
            }
            LearnerSpecConfig::Bin {} => (Family::Bin, LearnerKind::Bin, "bin"),
            LearnerSpecConfig::Round {} => (Family::Round, LearnerKind::Round, "round"),
            LearnerSpecConfig::Tree { depth } => (
                Family::Tree { truth_depth: 32 },
                LearnerKind::Tree { depth: *depth },
                "tree",
            ),
            LearnerSpecConfig::Constant { member } => {
                let v = member.to_mean_vector()?;
                (
                    Family::countable(vec![v.clone()])?,
                    LearnerKind::Constant(v),
                    "constant",
                )
            }
            LearnerSpecConfig::Qprop { c, k_max } => (
                Family::prop(*c)?,
                LearnerKind::Chained {
                    k_max: *k_max,
                    max_candidates: 1_000_000,
                },
                "qprop",
            ),
        };
        Ok(RegistryEntry {
            name: self
                .name
                .clone()
                .unwrap_or_else(|| format!("{default_name}-{}", index + 1)),
            family,
            learner,
        })
    }
}
