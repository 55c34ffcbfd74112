//! Concrete collections of product distributions and the oracles the
//! estimators need: seeded samplers, countable cover enumerators, and
//! ball-intersection member search.
//!
//! Every family here is a collection of product measures `Prod(q)`: under
//! `Prod(q)` the coordinates are independent and coordinate `j` is
//! Bernoulli(`q_j`). The shipped collections are:
//!
//! * `Prop { c }`: all `q` with `|q_j - 1/2| <= c/sqrt(j)` for every `j`.
//!   Separable: for any `eps > 0` a countable cover exists (see
//!   [`Family::cover`]).
//! * `Bin`: all `q in {0,1}^N`. Not separable (distinct members are at
//!   sup-distance 1, and there are uncountably many), yet learnable from a
//!   single sample because every coordinate is deterministic.
//! * `Tert`: all `q in {1/3, 2/3}^N`. Not separable and not uniformly
//!   estimable; shipped as the negative control.
//! * `Tree { truth_depth }`: vectors that mark one infinite root-to-leaf
//!   branch of the level-order tree with 2/3 and everything else with 1/3.
//!   Not separable, but branch recovery works (see
//!   [`crate::estimators::tree_learn`]).
//! * `Round`: `q_(2m-1) in {1/3, 2/3}` and `q_(2m) = 1` exactly when
//!   `q_(2m-1) = 2/3`. The deterministic even coordinates reveal the odd
//!   ones, so one sample suffices despite non-separability.
//! * `Countable`: an explicit finite list of mean vectors (its own 0-cover).
//! * `Union`: a countable union of the above.

mod config;
mod cover;
mod search;

pub use config::{FamilyConfig, FamilySpecToml, MemberSpec};
pub use cover::{CoverEnumerator, GridCover};

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::meanvec::{first_violation, BallConstraint, MeanVecError, MeanVector};

pub const THIRD: f64 = 1.0 / 3.0;
pub const TWO_THIRDS: f64 = 2.0 / 3.0;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("truth vector is not a member of {family}: {reason}")]
    TruthNotInFamily { family: String, reason: String },
    #[error("{family} admits no countable cover at epsilon {epsilon}")]
    NotSeparable { family: String, epsilon: f64 },
    #[error("cover for {family} requires epsilon > 0, got {epsilon}")]
    InvalidEpsilon { family: String, epsilon: f64 },
    #[error("feasibility undecidable within horizon {horizon}: {reason}")]
    HorizonExceeded { horizon: u64, reason: String },
    #[error("invalid family description: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    MeanVec(#[from] MeanVecError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// A collection of product distributions on `{0,1}^N`.
#[derive(Clone, Debug)]
pub enum Family {
    Prop { c: f64 },
    Bin,
    Tert,
    Tree { truth_depth: u32 },
    Round,
    Countable(Arc<Vec<MeanVector>>),
    Union(Vec<Family>),
}

impl Family {
    pub fn prop(c: f64) -> Result<Self, FamilyError> {
        if !c.is_finite() || c <= 0.0 {
            return Err(FamilyError::InvalidParam(format!(
                "qprop needs a constant c > 0, got {c}"
            )));
        }
        Ok(Family::Prop { c })
    }

    pub fn countable(members: Vec<MeanVector>) -> Result<Self, FamilyError> {
        if members.is_empty() {
            return Err(FamilyError::InvalidParam(
                "countable family needs at least one member".into(),
            ));
        }
        Ok(Family::Countable(Arc::new(members)))
    }

    pub fn union(parts: Vec<Family>) -> Result<Self, FamilyError> {
        if parts.is_empty() {
            return Err(FamilyError::InvalidParam(
                "union family needs at least one constituent".into(),
            ));
        }
        Ok(Family::Union(parts))
    }

    pub fn name(&self) -> String {
        match self {
            Family::Prop { c } => format!("qprop(c={c})"),
            Family::Bin => "qbin".into(),
            Family::Tert => "qtert".into(),
            Family::Tree { .. } => "qtree".into(),
            Family::Round => "qround".into(),
            Family::Countable(m) => format!("countable({})", m.len()),
            Family::Union(parts) => {
                let names: Vec<String> = parts.iter().map(|p| p.name()).collect();
                format!("union[{}]", names.join(", "))
            }
        }
    }

    /// Checks that `v` can belong to this collection: per-coordinate
    /// constraints up to `horizon` plus the structural tail rule where the
    /// representation admits one.
    pub fn check_membership(&self, v: &MeanVector, horizon: u64) -> Result<(), FamilyError> {
        let fail = |reason: String| {
            Err(FamilyError::TruthNotInFamily {
                family: self.name(),
                reason,
            })
        };
        match self {
            Family::Prop { c } => match v {
                MeanVector::ExplicitTail { prefix, tail } => {
                    for (i, &q) in prefix.iter().enumerate() {
                        let j = (i + 1) as f64;
                        if (q - 0.5).abs() > c / j.sqrt() {
                            return fail(format!("|q_{} - 1/2| exceeds c/sqrt(j)", i + 1));
                        }
                    }
                    // The bound c/sqrt(j) vanishes, so a constant tail can
                    // only be exactly 1/2.
                    if *tail != 0.5 {
                        return fail(format!("tail {tail} must equal 1/2"));
                    }
                    Ok(())
                }
                MeanVector::TreeBranch(_) => {
                    fail("branch-structured vectors have coordinates bounded away from 1/2 at every depth".into())
                }
                MeanVector::Closure { .. } => {
                    self.closure_coord_check(v, horizon, |j, q| {
                        ((q - 0.5).abs() <= c / (j as f64).sqrt())
                            .then_some(())
                            .ok_or_else(|| format!("|q_{j} - 1/2| exceeds c/sqrt(j)"))
                    })
                }
            },
            Family::Bin => self.value_set_check(v, horizon, &[0.0, 1.0]),
            Family::Tert => self.value_set_check(v, horizon, &[THIRD, TWO_THIRDS]),
            Family::Tree { .. } => match v {
                MeanVector::TreeBranch(b)
                    if b.on_value() == TWO_THIRDS && b.off_value() == THIRD =>
                {
                    Ok(())
                }
                _ => fail("qtree members are branch vectors with on=2/3, off=1/3".into()),
            },
            Family::Round => match v {
                MeanVector::Closure { .. } => self.closure_coord_check(v, horizon, |j, q| {
                    if j % 2 == 1 {
                        (q == THIRD || q == TWO_THIRDS)
                            .then_some(())
                            .ok_or_else(|| format!("odd coordinate {j} must be 1/3 or 2/3"))
                    } else {
                        // Checked after its odd partner, which the closure
                        // can re-evaluate cheaply.
                        Ok(())
                    }
                })
                .and_then(|_| {
                    for m in 1..=(horizon / 2) {
                        let odd = v.coord(2 * m - 1)?;
                        let even = v.coord(2 * m)?;
                        let expect = if odd == TWO_THIRDS { 1.0 } else { 0.0 };
                        if even != expect {
                            return fail(format!(
                                "coordinate {} must be the indicator of q_{} = 2/3",
                                2 * m,
                                2 * m - 1
                            ));
                        }
                    }
                    Ok(())
                }),
                _ => fail(
                    "qround members alternate {1/3,2/3} and {0,1}; no constant-tail or \
                     branch vector satisfies that"
                        .into(),
                ),
            },
            Family::Countable(members) => {
                for m in members.iter() {
                    if first_violation(v, m, 0.0, horizon).violation.is_none() {
                        return Ok(());
                    }
                }
                fail("vector matches no listed member".into())
            }
            Family::Union(parts) => {
                for p in parts {
                    if p.check_membership(v, horizon).is_ok() {
                        return Ok(());
                    }
                }
                fail("vector belongs to no constituent".into())
            }
        }
    }

    fn value_set_check(
        &self,
        v: &MeanVector,
        horizon: u64,
        allowed: &[f64],
    ) -> Result<(), FamilyError> {
        let ok = |q: f64| allowed.contains(&q);
        let fail = |reason: String| {
            Err(FamilyError::TruthNotInFamily {
                family: self.name(),
                reason,
            })
        };
        match v {
            MeanVector::ExplicitTail { prefix, tail } => {
                if let Some((i, &q)) = prefix.iter().enumerate().find(|(_, &q)| !ok(q)) {
                    return fail(format!("coordinate {} value {q} not allowed", i + 1));
                }
                if !ok(*tail) {
                    return fail(format!("tail value {tail} not allowed"));
                }
                Ok(())
            }
            MeanVector::TreeBranch(b) => {
                if ok(b.on_value()) && ok(b.off_value()) {
                    Ok(())
                } else {
                    fail("branch on/off values not allowed".into())
                }
            }
            MeanVector::Closure { .. } => self.closure_coord_check(v, horizon, |j, q| {
                ok(q)
                    .then_some(())
                    .ok_or_else(|| format!("coordinate {j} value {q} not allowed"))
            }),
        }
    }

    /// Per-coordinate check of a closure vector up to `horizon`; the tail
    /// cannot be certified for closures, which is the caller's contract.
    fn closure_coord_check(
        &self,
        v: &MeanVector,
        horizon: u64,
        check: impl Fn(u64, f64) -> Result<(), String>,
    ) -> Result<(), FamilyError> {
        for j in 1..=horizon.min(v.certified_horizon()) {
            check(j, v.coord(j)?).map_err(|reason| FamilyError::TruthNotInFamily {
                family: self.name(),
                reason,
            })?;
        }
        Ok(())
    }

    /// Draws `rows` i.i.d. samples of the first `horizon` coordinates from
    /// `Prod(truth)`. Deterministic in `seed`; regeneration is bit-identical.
    pub fn sample(
        &self,
        truth: &MeanVector,
        rows: usize,
        horizon: u64,
        seed: u64,
    ) -> Result<SampleSet, FamilyError> {
        if rows == 0 {
            return Err(FamilyError::InvalidParam("need at least one sample".into()));
        }
        self.check_membership(truth, horizon)?;
        SampleSet::draw(truth, rows, horizon, seed).map_err(FamilyError::from)
    }

    /// Countable cover of the collection's mean vectors at tolerance
    /// `epsilon`, when one exists.
    pub fn cover(&self, epsilon: f64) -> Result<CoverEnumerator, FamilyError> {
        match self {
            Family::Prop { c } => {
                if epsilon.is_nan() || epsilon <= 0.0 {
                    return Err(FamilyError::InvalidEpsilon {
                        family: self.name(),
                        epsilon,
                    });
                }
                Ok(CoverEnumerator::grid(*c, epsilon))
            }
            Family::Countable(members) => {
                if epsilon < 0.0 {
                    return Err(FamilyError::InvalidEpsilon {
                        family: self.name(),
                        epsilon,
                    });
                }
                Ok(CoverEnumerator::listed(members.clone(), epsilon))
            }
            Family::Bin | Family::Tert | Family::Tree { .. } | Family::Round => {
                // Distinct members sit at fixed positive sup-distance and
                // there are uncountably many, so no countable cover below
                // half that distance exists.
                Err(FamilyError::NotSeparable {
                    family: self.name(),
                    epsilon,
                })
            }
            Family::Union(parts) => {
                let covers = parts
                    .iter()
                    .map(|p| p.cover(epsilon))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(CoverEnumerator::chain(covers, epsilon))
            }
        }
    }

    /// A member of the collection inside the intersection of every ball, or
    /// `None` when the intersection is provably empty for this structure.
    pub fn find_member_in_balls(
        &self,
        constraints: &[BallConstraint],
        horizon: u64,
    ) -> Result<Option<MeanVector>, FamilyError> {
        search::find_member(self, constraints, horizon)
    }

    /// A fixed, deterministic member of the collection (the search order's
    /// first choice). Total algorithms bound to this family can fall back on
    /// it when their estimation path refuses.
    pub fn any_member(&self) -> MeanVector {
        search::default_member(self)
    }

    /// Seeded ground-truth generator; `horizon` guides how many coordinates
    /// are stored explicitly (structured kinds are exact beyond it).
    pub fn random_truth(&self, seed: u64, horizon: u64) -> MeanVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Family::Prop { c } => {
                // Perturbations on a 17-point grid spanning 80% of the band
                // [1/2 - c/sqrt(j), 1/2 + c/sqrt(j)], clamped into [0,1];
                // tail exactly 1/2. The 0.8 factor keeps values strictly
                // inside the band after rounding, so the exact membership
                // comparison accepts every generated truth.
                let prefix: Vec<f64> = (1..=horizon)
                    .map(|j| {
                        let g = rng.random_range(-8i32..=8) as f64 / 10.0;
                        (0.5 + g * (c / (j as f64).sqrt())).clamp(0.0, 1.0)
                    })
                    .collect();
                MeanVector::explicit(prefix, 0.5).expect("grid values lie in [0,1]")
            }
            Family::Bin => {
                let prefix: Vec<f64> = (0..horizon)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
                    .collect();
                let tail = if rng.random::<bool>() { 1.0 } else { 0.0 };
                MeanVector::explicit(prefix, tail).expect("binary values")
            }
            Family::Tert => {
                let prefix: Vec<f64> = (0..horizon)
                    .map(|_| if rng.random::<bool>() { TWO_THIRDS } else { THIRD })
                    .collect();
                let tail = if rng.random::<bool>() { TWO_THIRDS } else { THIRD };
                MeanVector::explicit(prefix, tail).expect("tert values")
            }
            Family::Tree { truth_depth } => {
                let bits: Vec<bool> = (0..*truth_depth).map(|_| rng.random()).collect();
                MeanVector::tree_branch(bits, TWO_THIRDS, THIRD).expect("tree values")
            }
            Family::Round => {
                let pairs = horizon / 2 + 1;
                let bits: Arc<Vec<bool>> =
                    Arc::new((0..pairs).map(|_| rng.random()).collect());
                round_vector(bits)
            }
            Family::Countable(members) => {
                let idx = (seed % members.len() as u64) as usize;
                members[idx].clone()
            }
            Family::Union(parts) => {
                let idx = (seed % parts.len() as u64) as usize;
                parts[idx].random_truth(seed ^ 0x9E37_79B9_7F4A_7C15, horizon)
            }
        }
    }
}

/// Q_round mean vector from its odd-coordinate choices: pair `m` is
/// `(2/3, 1)` when `bits[m-1]` is set and `(1/3, 0)` otherwise, with the
/// all-`(1/3, 0)` extension beyond the stored bits. The alternating structure
/// fits neither a constant tail nor a branch pattern, hence the closure kind;
/// the coordinate function is total.
pub fn round_vector(bits: Arc<Vec<bool>>) -> MeanVector {
    MeanVector::closure(
        move |j| {
            let pair = j.div_ceil(2) as usize;
            let hi = bits.get(pair - 1).copied().unwrap_or(false);
            if j % 2 == 1 {
                if hi {
                    TWO_THIRDS
                } else {
                    THIRD
                }
            } else if hi {
                1.0
            } else {
                0.0
            }
        },
        u64::MAX,
    )
}

/// `sup_{j <= horizon} log(j+1) / log(1/p_j)`: the growth functional that
/// decides whether the plain empirical mean estimates `Prod(p)` uniformly.
/// `p_j = 0` contributes 0; any `p_j = 1` makes the value infinite.
pub fn lgc_functional(p: &MeanVector, horizon: u64) -> Result<LgcDiagnostic, MeanVecError> {
    let mut sup: f64 = 0.0;
    for j in 1..=horizon {
        let q = p.coord(j)?;
        if q == 1.0 {
            return Ok(LgcDiagnostic {
                horizon,
                value: None,
            });
        }
        if q > 0.0 {
            sup = sup.max(((j + 1) as f64).ln() / (1.0 / q).ln());
        }
    }
    Ok(LgcDiagnostic {
        horizon,
        value: Some(sup),
    })
}

/// Value of the growth functional together with the horizon it was evaluated
/// on; `value: None` means infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LgcDiagnostic {
    pub horizon: u64,
    pub value: Option<f64>,
}

/// `rows` i.i.d. draws truncated to the first `horizon` coordinates: a
/// rows-by-horizon binary matrix plus the seed that regenerates it.
#[derive(Clone, Debug)]
pub struct SampleSet {
    rows: usize,
    horizon: u64,
    bits: Vec<u8>,
    seed: u64,
}

impl SampleSet {
    fn draw(
        truth: &MeanVector,
        rows: usize,
        horizon: u64,
        seed: u64,
    ) -> Result<Self, MeanVecError> {
        let cols = horizon as usize;
        let mut qvals = Vec::with_capacity(cols);
        for j in 1..=horizon {
            qvals.push(truth.coord(j)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits = vec![0u8; rows * cols];
        for row in bits.chunks_exact_mut(cols) {
            for (cell, &q) in row.iter_mut().zip(&qvals) {
                *cell = u8::from(rng.random::<f64>() < q);
            }
        }
        Ok(SampleSet {
            rows,
            horizon,
            bits,
            seed,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Entry of row `i` (0-based) at coordinate `j` (1-based).
    pub fn get(&self, i: usize, j: u64) -> bool {
        debug_assert!(i < self.rows && (1..=self.horizon).contains(&j));
        self.bits[i * self.horizon as usize + (j as usize - 1)] == 1
    }

    pub fn column_mean(&self, j: u64) -> f64 {
        let cols = self.horizon as usize;
        let idx = j as usize - 1;
        let ones: u32 = (0..self.rows)
            .map(|i| u32::from(self.bits[i * cols + idx]))
            .sum();
        f64::from(ones) / self.rows as f64
    }

    /// Column means of all coordinates, in order.
    pub fn empirical_prefix(&self) -> Vec<f64> {
        let cols = self.horizon as usize;
        let mut counts = vec![0u32; cols];
        for row in self.bits.chunks_exact(cols) {
            for (c, &b) in counts.iter_mut().zip(row) {
                *c += u32::from(b);
            }
        }
        counts
            .into_iter()
            .map(|c| f64::from(c) / self.rows as f64)
            .collect()
    }

    /// Splits an even-row set into two halves of equal size (first half =
    /// training, second half = validation). Rows are i.i.d. by construction,
    /// so the split is positional.
    pub fn split_half(&self) -> (SampleSet, SampleSet) {
        assert!(self.rows.is_multiple_of(2), "split needs an even number of rows");
        let half = self.rows / 2;
        let cols = self.horizon as usize;
        let first = SampleSet {
            rows: half,
            horizon: self.horizon,
            bits: self.bits[..half * cols].to_vec(),
            seed: self.seed,
        };
        let second = SampleSet {
            rows: half,
            horizon: self.horizon,
            bits: self.bits[half * cols..].to_vec(),
            seed: self.seed,
        };
        (first, second)
    }

    /// CSV export: one line per draw, one column per coordinate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols = self.horizon as usize;
        let header: Vec<String> = (1..=cols).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.bits.chunks_exact(cols) {
            let line: Vec<&str> = row.iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}
