//! Mean vectors: lazily evaluated elements of `[0,1]^N` with exact structural
//! operations.
//!
//! A distribution on infinite binary sequences is summarized by its mean
//! vector, the coordinate-wise expectation `q = (q_1, q_2, ...)`. The
//! estimators in this crate need to answer questions about *all* coordinates
//! of such vectors ("is there any coordinate where these two differ by more
//! than t?"), which is only decidable when the vector carries structure. Two
//! structured representations make every such question exact:
//!
//! * [`MeanVector::ExplicitTail`]: a finite explicit prefix followed by a
//!   constant tail. Beyond the longer of two prefixes, the pointwise gap
//!   between two such vectors is a single constant.
//! * [`MeanVector::TreeBranch`]: the vector takes `on_value` exactly on the
//!   level-order labels of one infinite root-to-leaf branch of the complete
//!   binary tree and `off_value` everywhere else. Two branches agree on a
//!   finite shared prefix and are disjoint afterwards, so the pointwise gap
//!   takes at most four values, each realized on an analytically known set
//!   of labels.
//!
//! The third kind, [`MeanVector::Closure`], wraps an arbitrary coordinate
//! function and is honest about its limits: scans involving it are flagged
//! [`Certainty::HorizonLimited`].
//!
//! Level-order labeling: the root is label 1 and the children of label `k`
//! are `2k` (left) and `2k+1` (right). Coordinate `q_j` of a branch vector is
//! attached to the node with label `j`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default coordinate horizon for scans that cannot be resolved analytically.
pub const DEFAULT_HORIZON: u64 = 1_000_000;

/// Deepest branch prefix a [`TreeBranch`] may store; keeps every label of the
/// stored prefix representable in a `u64`.
pub const MAX_BRANCH_DEPTH: usize = 62;

#[derive(Debug, Error)]
pub enum MeanVecError {
    #[error("coordinate {j} is beyond the certified horizon {hint} of a closure vector")]
    HorizonExceeded { j: u64, hint: u64 },
    #[error("value {value} at position {pos} lies outside [0,1]")]
    ValueOutOfRange { value: f64, pos: usize },
    #[error("branch prefix of {len} bits exceeds the supported depth of {MAX_BRANCH_DEPTH}")]
    BranchTooDeep { len: usize },
    #[error("ball radius must be positive and finite, got {0}")]
    BadRadius(f64),
}

type CoordFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

/// An element of `[0,1]^N`.
///
/// Immutable after construction; all operations are pure, so values can be
/// shared freely across parallel trials.
#[derive(Clone)]
pub enum MeanVector {
    /// Explicit `prefix`, then `tail` repeated on every later coordinate.
    ExplicitTail { prefix: Arc<[f64]>, tail: f64 },
    /// `on_value` on one infinite branch of the level-order tree, `off_value`
    /// elsewhere.
    TreeBranch(TreeBranch),
    /// Arbitrary total coordinate function, certified only up to
    /// `horizon_hint`.
    Closure { coord_fn: CoordFn, horizon_hint: u64 },
}

impl fmt::Debug for MeanVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanVector::ExplicitTail { prefix, tail } => f
                .debug_struct("ExplicitTail")
                .field("prefix_len", &prefix.len())
                .field("tail", tail)
                .finish(),
            MeanVector::TreeBranch(b) => b.fmt(f),
            MeanVector::Closure { horizon_hint, .. } => f
                .debug_struct("Closure")
                .field("horizon_hint", horizon_hint)
                .finish(),
        }
    }
}

/// Branch-structured vector: `on` at every label of one infinite branch, `off`
/// at every other label.
///
/// The branch is identified by its bit string (0 = left, 1 = right). Only a
/// finite prefix is stored; beyond it the branch extends deterministically to
/// the left (all further bits are 0), so membership of any label is decidable.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeBranch {
    bits: Vec<bool>,
    on: f64,
    off: f64,
}

impl TreeBranch {
    pub fn new(bits: Vec<bool>, on: f64, off: f64) -> Result<Self, MeanVecError> {
        if bits.len() > MAX_BRANCH_DEPTH {
            return Err(MeanVecError::BranchTooDeep { len: bits.len() });
        }
        check_unit(on, 0)?;
        check_unit(off, 1)?;
        Ok(TreeBranch { bits, on, off })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn on_value(&self) -> f64 {
        self.on
    }

    pub fn off_value(&self) -> f64 {
        self.off
    }

    /// Branch bit at `depth` (1-based); all-left beyond the stored prefix.
    pub fn bit(&self, depth: u64) -> bool {
        if depth == 0 {
            return false;
        }
        self.bits
            .get(depth as usize - 1)
            .copied()
            .unwrap_or(false)
    }

    /// Label of the branch node at `depth` (depth 0 is the root, label 1).
    ///
    /// Saturates at `u64::MAX` past depth 63; callers only ever compare these
    /// labels against coordinates far below that.
    pub fn label_at_depth(&self, depth: u64) -> u64 {
        let mut label: u128 = 1;
        for d in 1..=depth {
            label = label * 2 + u128::from(self.bit(d));
            if label > u128::from(u64::MAX) {
                return u64::MAX;
            }
        }
        label as u64
    }

    /// Does the branch pass through the node with this level-order label?
    ///
    /// The path to label `j` is spelled by the binary digits of `j` below the
    /// leading one, most significant first.
    pub fn contains_label(&self, label: u64) -> bool {
        debug_assert!(label >= 1);
        let depth = 63 - label.leading_zeros() as u64;
        for d in 1..=depth {
            let bit = (label >> (depth - d)) & 1 == 1;
            if bit != self.bit(d) {
                return false;
            }
        }
        true
    }

    /// Coordinate value at `label`.
    pub fn value(&self, label: u64) -> f64 {
        if self.contains_label(label) {
            self.on
        } else {
            self.off
        }
    }

    /// Smallest branch label strictly greater than `j`.
    pub fn first_on_label_above(&self, j: u64) -> u64 {
        let mut depth = 0;
        loop {
            let label = self.label_at_depth(depth);
            if label > j {
                return label;
            }
            depth += 1;
        }
    }

    /// Smallest non-branch label strictly greater than `j`.
    ///
    /// Branch labels at least double at each depth, so two consecutive
    /// integers greater than 2 are never both on the branch and this loop
    /// takes at most a few steps.
    pub fn first_off_label_above(&self, j: u64) -> u64 {
        let mut cand = j.max(1) + 1;
        loop {
            if !self.contains_label(cand) {
                return cand;
            }
            cand += 1;
        }
    }

    /// Depth of the first bit where the two branches disagree, or `None` if
    /// they are the same infinite branch. Decidable because both extensions
    /// are all-left beyond the stored prefixes.
    pub fn divergence_depth(&self, other: &TreeBranch) -> Option<u64> {
        let max_len = self.bits.len().max(other.bits.len()) as u64;
        (1..=max_len).find(|&d| self.bit(d) != other.bit(d))
    }
}

fn check_unit(value: f64, pos: usize) -> Result<(), MeanVecError> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(MeanVecError::ValueOutOfRange { value, pos });
    }
    Ok(())
}

impl MeanVector {
    /// Explicit prefix plus constant tail, validated into `[0,1]`.
    pub fn explicit(prefix: Vec<f64>, tail: f64) -> Result<Self, MeanVecError> {
        for (pos, &v) in prefix.iter().enumerate() {
            check_unit(v, pos)?;
        }
        check_unit(tail, prefix.len())?;
        Ok(MeanVector::ExplicitTail {
            prefix: prefix.into(),
            tail,
        })
    }

    /// The constant vector `(v, v, ...)`.
    pub fn constant(v: f64) -> Result<Self, MeanVecError> {
        Self::explicit(Vec::new(), v)
    }

    pub fn tree_branch(bits: Vec<bool>, on: f64, off: f64) -> Result<Self, MeanVecError> {
        Ok(MeanVector::TreeBranch(TreeBranch::new(bits, on, off)?))
    }

    pub fn closure<F>(coord_fn: F, horizon_hint: u64) -> Self
    where
        F: Fn(u64) -> f64 + Send + Sync + 'static,
    {
        MeanVector::Closure {
            coord_fn: Arc::new(coord_fn),
            horizon_hint,
        }
    }

    /// Coordinate `q_j`, 1-based. Deterministic and repeatable.
    pub fn coord(&self, j: u64) -> Result<f64, MeanVecError> {
        assert!(j >= 1, "coordinates are 1-based");
        match self {
            MeanVector::ExplicitTail { prefix, tail } => Ok(prefix
                .get(j as usize - 1)
                .copied()
                .unwrap_or(*tail)),
            MeanVector::TreeBranch(b) => Ok(b.value(j)),
            MeanVector::Closure {
                coord_fn,
                horizon_hint,
            } => {
                if j > *horizon_hint {
                    Err(MeanVecError::HorizonExceeded {
                        j,
                        hint: *horizon_hint,
                    })
                } else {
                    Ok(coord_fn(j))
                }
            }
        }
    }

    /// Largest coordinate this vector can certify. Unbounded for the
    /// structured kinds.
    pub fn certified_horizon(&self) -> u64 {
        match self {
            MeanVector::Closure { horizon_hint, .. } => *horizon_hint,
            _ => u64::MAX,
        }
    }

    pub fn is_structured(&self) -> bool {
        !matches!(self, MeanVector::Closure { .. })
    }
}

/// Whether the outcome of a violation scan is a proof about all of `N` or
/// only about the coordinates actually inspected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Certainty {
    Exact,
    HorizonLimited,
}

/// Result of [`first_violation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViolationScan {
    /// Smallest coordinate with `|a_j - b_j| > threshold`, if one was found.
    pub violation: Option<u64>,
    /// `Exact` when the answer is a statement about every coordinate.
    pub certainty: Certainty,
}

impl ViolationScan {
    fn exact(violation: Option<u64>) -> Self {
        ViolationScan {
            violation,
            certainty: Certainty::Exact,
        }
    }
}

/// `max_{1<=j<=limit} |a_j - b_j|`.
pub fn prefix_linf(a: &MeanVector, b: &MeanVector, limit: u64) -> Result<f64, MeanVecError> {
    let mut sup: f64 = 0.0;
    for j in 1..=limit {
        sup = sup.max((a.coord(j)? - b.coord(j)?).abs());
    }
    Ok(sup)
}

/// Smallest coordinate where `|a_j - b_j| > threshold`.
///
/// For pairs of structured vectors the search is analytic over all of `N`:
/// "no violation" comes back as an exact answer. If either side is a closure
/// the scan stops at `min(horizon, horizon_hint)` and absence of a violation
/// is flagged [`Certainty::HorizonLimited`]. A violation that is found is
/// always exact (the scan proceeds from coordinate 1).
pub fn first_violation(
    a: &MeanVector,
    b: &MeanVector,
    threshold: f64,
    horizon: u64,
) -> ViolationScan {
    use MeanVector::*;
    match (a, b) {
        (ExplicitTail { .. }, ExplicitTail { .. })
        | (ExplicitTail { .. }, TreeBranch(_))
        | (TreeBranch(_), ExplicitTail { .. })
        | (TreeBranch(_), TreeBranch(_)) => exact_violation(a, b, threshold),
        _ => {
            let limit = horizon
                .min(a.certified_horizon())
                .min(b.certified_horizon());
            for j in 1..=limit {
                // Coordinates up to the certified horizon cannot fail.
                let (va, vb) = (a.coord(j).unwrap(), b.coord(j).unwrap());
                if (va - vb).abs() > threshold {
                    return ViolationScan::exact(Some(j));
                }
            }
            ViolationScan {
                violation: None,
                certainty: Certainty::HorizonLimited,
            }
        }
    }
}

fn exact_violation(a: &MeanVector, b: &MeanVector, threshold: f64) -> ViolationScan {
    use MeanVector::*;
    match (a, b) {
        (
            ExplicitTail {
                prefix: pa,
                tail: ta,
            },
            ExplicitTail {
                prefix: pb,
                tail: tb,
            },
        ) => {
            let max_len = pa.len().max(pb.len()) as u64;
            for j in 1..=max_len {
                if (a.coord(j).unwrap() - b.coord(j).unwrap()).abs() > threshold {
                    return ViolationScan::exact(Some(j));
                }
            }
            if (ta - tb).abs() > threshold {
                ViolationScan::exact(Some(max_len + 1))
            } else {
                ViolationScan::exact(None)
            }
        }
        (ExplicitTail { prefix, tail }, TreeBranch(tb)) | (TreeBranch(tb), ExplicitTail { prefix, tail }) => {
            let len = prefix.len() as u64;
            for j in 1..=len {
                let pv = prefix[j as usize - 1];
                if (pv - tb.value(j)).abs() > threshold {
                    return ViolationScan::exact(Some(j));
                }
            }
            // Past the prefix the explicit side is the constant tail; the
            // branch side takes `on` on labels above `len` (infinitely many)
            // and `off` on the rest.
            let mut best: Option<u64> = None;
            if (tail - tb.on_value()).abs() > threshold {
                best = merge_min(best, tb.first_on_label_above(len));
            }
            if (tail - tb.off_value()).abs() > threshold {
                best = merge_min(best, tb.first_off_label_above(len));
            }
            ViolationScan::exact(best)
        }
        (TreeBranch(ba), TreeBranch(bb)) => {
            let d_on_on = (ba.on_value() - bb.on_value()).abs();
            let d_off_off = (ba.off_value() - bb.off_value()).abs();
            let mut best: Option<u64> = None;
            match ba.divergence_depth(bb) {
                None => {
                    // Same branch: every label is either shared-on or
                    // shared-off.
                    if d_on_on > threshold {
                        best = merge_min(best, 1);
                    }
                    if d_off_off > threshold {
                        best = merge_min(best, ba.first_off_label_above(1));
                    }
                }
                Some(d) => {
                    // Labels split into four classes: shared prefix
                    // (depths 0..d, smallest label 1), a-only (smallest is
                    // a's node at depth d), b-only, and off both branches.
                    if d_on_on > threshold {
                        best = merge_min(best, 1);
                    }
                    if (ba.on_value() - bb.off_value()).abs() > threshold {
                        best = merge_min(best, ba.label_at_depth(d));
                    }
                    if (ba.off_value() - bb.on_value()).abs() > threshold {
                        best = merge_min(best, bb.label_at_depth(d));
                    }
                    if d_off_off > threshold {
                        best = merge_min(best, first_label_off_both(ba, bb));
                    }
                }
            }
            ViolationScan::exact(best)
        }
        _ => unreachable!("exact_violation is only called on structured pairs"),
    }
}

fn merge_min(best: Option<u64>, cand: u64) -> Option<u64> {
    Some(best.map_or(cand, |b| b.min(cand)))
}

/// Smallest label on neither branch. Each depth level of the tree contains at
/// most two branch labels, so the answer is at most 7.
fn first_label_off_both(a: &TreeBranch, b: &TreeBranch) -> u64 {
    let mut j = 2;
    loop {
        if !a.contains_label(j) && !b.contains_label(j) {
            return j;
        }
        j += 1;
    }
}

/// `sup_{j > limit} |a_j - b_j|`, exact for structured pairs; `None` when a
/// closure is involved.
pub fn sup_beyond(a: &MeanVector, b: &MeanVector, limit: u64) -> Option<f64> {
    use MeanVector::*;
    match (a, b) {
        (
            ExplicitTail {
                prefix: pa,
                tail: ta,
            },
            ExplicitTail {
                prefix: pb,
                tail: tb,
            },
        ) => {
            let max_len = pa.len().max(pb.len()) as u64;
            let mut sup = (ta - tb).abs();
            for j in (limit + 1)..=max_len {
                sup = sup.max((a.coord(j).unwrap() - b.coord(j).unwrap()).abs());
            }
            Some(sup)
        }
        (ExplicitTail { prefix, tail }, TreeBranch(tb)) | (TreeBranch(tb), ExplicitTail { prefix, tail }) => {
            let len = prefix.len() as u64;
            let mut sup = (tail - tb.on_value())
                .abs()
                .max((tail - tb.off_value()).abs());
            for j in (limit + 1)..=len {
                let pv = prefix[j as usize - 1];
                sup = sup.max((pv - tb.value(j)).abs());
            }
            Some(sup)
        }
        (TreeBranch(ba), TreeBranch(bb)) => {
            let mut sup = (ba.off_value() - bb.off_value()).abs();
            match ba.divergence_depth(bb) {
                None => {
                    sup = sup.max((ba.on_value() - bb.on_value()).abs());
                }
                Some(d) => {
                    sup = sup
                        .max((ba.on_value() - bb.off_value()).abs())
                        .max((ba.off_value() - bb.on_value()).abs());
                    // Shared-on labels are finite; they matter only if the
                    // deepest one lies beyond the cutoff.
                    if d >= 1 && ba.label_at_depth(d - 1) > limit {
                        sup = sup.max((ba.on_value() - bb.on_value()).abs());
                    }
                }
            }
            Some(sup)
        }
        _ => None,
    }
}

/// Ball constraint `|q_j - center_j| <= radius` for every coordinate, as
/// accumulated by the chaining estimators.
#[derive(Clone, Debug)]
pub struct BallConstraint {
    pub center: MeanVector,
    pub radius: f64,
}

impl BallConstraint {
    pub fn new(center: MeanVector, radius: f64) -> Result<Self, MeanVecError> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(MeanVecError::BadRadius(radius));
        }
        Ok(BallConstraint { center, radius })
    }
}

/// Intersection of the constraints' closed per-coordinate intervals with
/// `[0,1]` at coordinate `j`; `None` means the intersection is empty.
pub fn intersect_ball_intervals(
    constraints: &[BallConstraint],
    j: u64,
) -> Result<Option<(f64, f64)>, MeanVecError> {
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 1.0;
    for c in constraints {
        let v = c.center.coord(j)?;
        lo = lo.max(v - c.radius);
        hi = hi.min(v + c.radius);
    }
    Ok((lo <= hi).then_some((lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THIRD: f64 = 1.0 / 3.0;
    const TWO_THIRDS: f64 = 2.0 / 3.0;

    fn et(prefix: &[f64], tail: f64) -> MeanVector {
        MeanVector::explicit(prefix.to_vec(), tail).unwrap()
    }

    fn branch(bits: &[u8]) -> MeanVector {
        MeanVector::tree_branch(bits.iter().map(|&b| b == 1).collect(), TWO_THIRDS, THIRD)
            .unwrap()
    }

    #[test]
    fn coord_explicit_tail_cases() {
        let v = et(&[0.9], 0.5);
        assert_eq!(v.coord(1).unwrap(), 0.9);
        assert_eq!(v.coord(3).unwrap(), 0.5);
    }

    #[test]
    fn coord_tree_branch_root_and_off_node() {
        let v = branch(&[0, 0, 0]);
        // The root is on every branch.
        assert_eq!(v.coord(1).unwrap(), TWO_THIRDS);
        // Level-order labels of the all-left path are powers of two, so
        // label 3 is off-branch.
        assert_eq!(v.coord(3).unwrap(), THIRD);
        assert_eq!(v.coord(2).unwrap(), TWO_THIRDS);
        assert_eq!(v.coord(4).unwrap(), TWO_THIRDS);
        assert_eq!(v.coord(8).unwrap(), TWO_THIRDS);
        assert_eq!(v.coord(5).unwrap(), THIRD);
    }

    #[test]
    fn coord_closure_respects_horizon() {
        let v = MeanVector::closure(|j| 1.0 / (j as f64 + 1.0), 100);
        assert_eq!(v.coord(100).unwrap(), 1.0 / 101.0);
        assert!(matches!(
            v.coord(101),
            Err(MeanVecError::HorizonExceeded { j: 101, hint: 100 })
        ));
    }

    #[test]
    fn branch_labels_match_recursive_walk() {
        // Independent oracle: recursively walk the tree to depth 16 and
        // collect the on-branch labels, then compare coordinate values.
        fn walk(label: u64, depth: u64, b: &TreeBranch, out: &mut Vec<u64>) {
            out.push(label);
            if depth < 16 {
                let next = 2 * label + u64::from(b.bit(depth + 1));
                walk(next, depth + 1, b, out);
            }
        }
        let bits: Vec<bool> = (0..16).map(|i| i % 3 == 1).collect();
        let tb = TreeBranch::new(bits, TWO_THIRDS, THIRD).unwrap();
        let mut on_labels = Vec::new();
        walk(1, 0, &tb, &mut on_labels);
        let on_set: std::collections::HashSet<u64> = on_labels.into_iter().collect();
        for label in 1..(1u64 << 17) {
            let expect = if on_set.contains(&label) { TWO_THIRDS } else { THIRD };
            assert_eq!(tb.value(label), expect, "label {label}");
        }
    }

    #[test]
    fn prefix_linf_known_gaps() {
        let a = et(&[0.4, 0.7], 0.5);
        assert_eq!(prefix_linf(&a, &a, 100).unwrap(), 0.0);

        // Distinct branch vectors differ by exactly 1/3 somewhere.
        let b1 = branch(&[0, 0]);
        let b2 = branch(&[1, 0]);
        assert_eq!(prefix_linf(&b1, &b2, 8).unwrap(), THIRD);

        // Distinct binary vectors differ by exactly 1.
        let c1 = et(&[1.0, 0.0], 0.0);
        let c2 = et(&[1.0, 1.0], 0.0);
        assert_eq!(prefix_linf(&c1, &c2, 2).unwrap(), 1.0);
    }

    #[test]
    fn first_violation_tail_case() {
        let a = et(&[THIRD], TWO_THIRDS);
        let b = et(&[THIRD], THIRD);
        let scan = first_violation(&a, &b, 0.1, DEFAULT_HORIZON);
        assert_eq!(scan.violation, Some(2));
        assert_eq!(scan.certainty, Certainty::Exact);
    }

    #[test]
    fn first_violation_equal_vectors() {
        let a = branch(&[1, 0, 1]);
        let scan = first_violation(&a, &a.clone(), 0.0, DEFAULT_HORIZON);
        assert_eq!(scan.violation, None);
        assert_eq!(scan.certainty, Certainty::Exact);
    }

    /// Brute-force oracle used by the property tests below.
    fn brute_first_violation(
        a: &MeanVector,
        b: &MeanVector,
        threshold: f64,
        limit: u64,
    ) -> Option<u64> {
        (1..=limit).find(|&j| (a.coord(j).unwrap() - b.coord(j).unwrap()).abs() > threshold)
    }

    #[test]
    fn branch_divergence_matches_brute_force() {
        // Two branches sharing a 4-bit prefix, then diverging: the analytic
        // answer must match a full scan of the first 2^(d+2) coordinates.
        let a = branch(&[1, 0, 1, 1, 0, 0]);
        let b = branch(&[1, 0, 1, 1, 1, 0]);
        for threshold in [0.0, 0.1, 0.3, THIRD] {
            let scan = first_violation(&a, &b, threshold, DEFAULT_HORIZON);
            assert_eq!(scan.certainty, Certainty::Exact);
            assert_eq!(
                scan.violation,
                brute_first_violation(&a, &b, threshold, 1 << 8),
                "threshold {threshold}"
            );
        }
    }

    #[test]
    fn first_violation_exact_matches_million_coordinate_scan() {
        // A handful of structured pairs checked against the full scan up to
        // 10^6 coordinates.
        let pairs = [
            (et(&[0.2, 0.8, 0.5], 0.5), et(&[0.2, 0.5, 0.5], 0.45)),
            (et(&[0.5; 10], 0.5), branch(&[0, 1, 0, 1])),
            (branch(&[1, 1, 0]), branch(&[1, 1, 1])),
            (branch(&[0, 0]), branch(&[0, 0])),
        ];
        for (a, b) in &pairs {
            for threshold in [0.0, 0.05, 0.2, 0.4] {
                let scan = first_violation(a, b, threshold, DEFAULT_HORIZON);
                assert_eq!(scan.certainty, Certainty::Exact);
                let brute = brute_first_violation(a, b, threshold, 1_000_000);
                assert_eq!(scan.violation, brute);
            }
        }
    }

    #[test]
    fn ball_intervals_examples() {
        let c = |center: f64, r: f64| {
            BallConstraint::new(MeanVector::constant(center).unwrap(), r).unwrap()
        };
        assert_eq!(
            intersect_ball_intervals(&[c(0.5, 0.25)], 1).unwrap(),
            Some((0.25, 0.75))
        );
        // 0.75 < 0.8: empty.
        assert_eq!(
            intersect_ball_intervals(&[c(0.5, 0.25), c(0.9, 0.1)], 1).unwrap(),
            None
        );
        // Clamped to the unit interval.
        assert_eq!(
            intersect_ball_intervals(&[c(0.5, 0.5)], 1).unwrap(),
            Some((0.0, 1.0))
        );
    }

    #[test]
    fn radius_must_be_positive() {
        assert!(BallConstraint::new(MeanVector::constant(0.5).unwrap(), 0.0).is_err());
    }

    #[test]
    fn sup_beyond_matches_direct_scan() {
        let pairs = [
            (et(&[0.2, 0.8, 0.5], 0.4), et(&[0.2, 0.5], 0.45)),
            (et(&[0.5; 6], 0.5), branch(&[0, 1, 0, 1])),
            (branch(&[1, 1, 0]), branch(&[1, 0, 1])),
            (branch(&[0, 1]), branch(&[0, 1])),
        ];
        for (a, b) in &pairs {
            for limit in [0u64, 1, 3, 10, 100] {
                let analytic = sup_beyond(a, b, limit).unwrap();
                let mut brute: f64 = 0.0;
                for j in (limit + 1)..=200_000 {
                    brute = brute.max((a.coord(j).unwrap() - b.coord(j).unwrap()).abs());
                }
                assert!(
                    (analytic - brute).abs() < 1e-15,
                    "limit {limit}: {analytic} vs {brute}"
                );
            }
        }
    }

    fn arb_structured() -> impl Strategy<Value = MeanVector> {
        let explicit = (
            prop::collection::vec(0.0f64..=1.0, 0..12),
            0.0f64..=1.0,
        )
            .prop_map(|(p, t)| MeanVector::explicit(p, t).unwrap());
        let tree = (
            prop::collection::vec(any::<bool>(), 0..10),
            0.0f64..=1.0,
            0.0f64..=1.0,
        )
            .prop_map(|(bits, on, off)| MeanVector::tree_branch(bits, on, off).unwrap());
        prop_oneof![explicit, tree]
    }

    proptest! {
        #[test]
        fn prefix_linf_is_a_metric_prefix(
            a in arb_structured(),
            b in arb_structured(),
            c in arb_structured(),
            limit in 1u64..200,
        ) {
            let dab = prefix_linf(&a, &b, limit).unwrap();
            let dba = prefix_linf(&b, &a, limit).unwrap();
            prop_assert_eq!(dab, dba);
            let dac = prefix_linf(&a, &c, limit).unwrap();
            let dcb = prefix_linf(&c, &b, limit).unwrap();
            prop_assert!(dab <= dac + dcb + 1e-12);
            // Monotone in the prefix length.
            let shorter = prefix_linf(&a, &b, limit.div_ceil(2)).unwrap();
            prop_assert!(shorter <= dab);
        }

        #[test]
        fn first_violation_agrees_with_brute_force(
            a in arb_structured(),
            b in arb_structured(),
            threshold in 0.0f64..=1.0,
        ) {
            let scan = first_violation(&a, &b, threshold, DEFAULT_HORIZON);
            prop_assert_eq!(scan.certainty, Certainty::Exact);
            let brute = brute_first_violation(&a, &b, threshold, 10_000);
            match (scan.violation, brute) {
                (Some(x), Some(y)) => prop_assert_eq!(x, y),
                (None, Some(y)) => prop_assert!(false, "missed violation at {}", y),
                // An analytic violation beyond the brute-force window is
                // consistent with the bounded scan finding nothing.
                (Some(x), None) => prop_assert!(x > 10_000),
                (None, None) => {}
            }
        }

        #[test]
        fn ball_intersection_is_sound(
            center in 0.0f64..=1.0,
            r1 in 0.01f64..=1.0,
            r2 in 0.01f64..=1.0,
            j in 1u64..64,
        ) {
            // Both balls are centered on vectors that agree at j, so the
            // point center_j itself satisfies every constraint and the
            // intersection must be nonempty and contain it.
            let v = MeanVector::constant(center).unwrap();
            let cs = vec![
                BallConstraint::new(v.clone(), r1).unwrap(),
                BallConstraint::new(v.clone(), r2).unwrap(),
            ];
            let got = intersect_ball_intervals(&cs, j).unwrap();
            prop_assert!(got.is_some());
            let (lo, hi) = got.unwrap();
            prop_assert!(lo <= center && center <= hi);
        }
    }
}
