//! Ball-intersection member search.
//!
//! Given accumulated constraints "stay within `r_k` of center `k` at every
//! coordinate", produce some member of the family inside all of them, or
//! certify that none exists. Product structure makes this decidable
//! coordinate by coordinate; the branch family needs a small search over
//! branch prefixes instead.

use std::sync::Arc;

use crate::meanvec::{
    first_violation, intersect_ball_intervals, BallConstraint, MeanVector, TreeBranch,
};

use super::{round_vector, Family, FamilyError, THIRD, TWO_THIRDS};

pub(super) fn find_member(
    family: &Family,
    constraints: &[BallConstraint],
    horizon: u64,
) -> Result<Option<MeanVector>, FamilyError> {
    if constraints.is_empty() {
        return Ok(Some(default_member(family)));
    }
    let found = match family {
        Family::Prop { c } => prop_member(*c, constraints)?,
        Family::Countable(members) => members
            .iter()
            .find(|m| satisfies_all(m, constraints, horizon))
            .cloned(),
        Family::Tree { .. } => tree_member(constraints, horizon)?,
        Family::Bin => value_set_member(&[0.0, 1.0], constraints)?,
        Family::Tert => value_set_member(&[THIRD, TWO_THIRDS], constraints)?,
        Family::Round => round_member(constraints)?,
        Family::Union(parts) => {
            let mut hit = None;
            for p in parts {
                if let Some(m) = find_member(p, constraints, horizon)? {
                    hit = Some(m);
                    break;
                }
            }
            hit
        }
    };
    // Soundness re-check: whatever came out must satisfy every constraint.
    if let Some(member) = &found {
        for c in constraints {
            if let Some(j) = first_violation(member, &c.center, c.radius, horizon).violation {
                return Err(FamilyError::Internal(format!(
                    "member search for {} returned a vector violating a ball at coordinate {j}",
                    family.name()
                )));
            }
        }
    }
    Ok(found)
}

pub(super) fn default_member(family: &Family) -> MeanVector {
    match family {
        Family::Prop { .. } => MeanVector::constant(0.5).unwrap(),
        Family::Bin => MeanVector::constant(0.0).unwrap(),
        Family::Tert => MeanVector::constant(THIRD).unwrap(),
        Family::Tree { .. } => {
            MeanVector::TreeBranch(TreeBranch::new(Vec::new(), TWO_THIRDS, THIRD).unwrap())
        }
        Family::Round => round_vector(Arc::new(Vec::new())),
        Family::Countable(members) => members[0].clone(),
        Family::Union(parts) => default_member(&parts[0]),
    }
}

fn satisfies_all(m: &MeanVector, constraints: &[BallConstraint], horizon: u64) -> bool {
    constraints
        .iter()
        .all(|c| first_violation(m, &c.center, c.radius, horizon).violation.is_none())
}

/// Per-constraint steady tail: the values a center keeps taking beyond every
/// bound, paired with the ball radius.
type SteadyTails = Vec<(Vec<f64>, f64)>;

/// Structured centers only: the coordinate where each center settles into its
/// steady repetition, and the set of values it keeps taking afterwards.
fn steady_profile(constraints: &[BallConstraint]) -> Result<(u64, SteadyTails), FamilyError> {
    let mut scan_to = 1u64;
    let mut tails = Vec::with_capacity(constraints.len());
    for c in constraints {
        match &c.center {
            MeanVector::ExplicitTail { prefix, tail } => {
                scan_to = scan_to.max(prefix.len() as u64);
                tails.push((vec![*tail], c.radius));
            }
            MeanVector::TreeBranch(b) => {
                // Both classes occur beyond every bound: on-labels at each
                // depth, off-labels in between.
                tails.push((vec![b.on_value(), b.off_value()], c.radius));
            }
            MeanVector::Closure { horizon_hint, .. } => {
                return Err(FamilyError::HorizonExceeded {
                    horizon: *horizon_hint,
                    reason: "ball centers without structural tails cannot certify feasibility \
                             on all coordinates"
                        .into(),
                });
            }
        }
    }
    Ok((scan_to, tails))
}

fn tail_feasible(tails: &[(Vec<f64>, f64)], value: f64) -> bool {
    tails
        .iter()
        .all(|(vals, r)| vals.iter().all(|v| (value - v).abs() <= *r))
}

/// Per-coordinate interval midpoints for the `Prop` family. Every coordinate
/// beyond the scanned range must admit the tail value 1/2.
fn prop_member(
    c: f64,
    constraints: &[BallConstraint],
) -> Result<Option<MeanVector>, FamilyError> {
    let (scan_to, tails) = steady_profile(constraints)?;
    let mut prefix = Vec::with_capacity(scan_to as usize);
    for j in 1..=scan_to {
        let Some((blo, bhi)) = intersect_ball_intervals(constraints, j)? else {
            return Ok(None);
        };
        let half = c / (j as f64).sqrt();
        let lo = blo.max((0.5 - half).max(0.0));
        let hi = bhi.min((0.5 + half).min(1.0));
        if lo > hi {
            return Ok(None);
        }
        prefix.push((lo + hi) / 2.0);
    }
    if !tail_feasible(&tails, 0.5) {
        return Ok(None);
    }
    while prefix.last() == Some(&0.5) {
        prefix.pop();
    }
    Ok(Some(MeanVector::explicit(prefix, 0.5)?))
}

/// Families whose coordinates range over a fixed finite value set, with a
/// constant tail: pick the smallest allowed value per coordinate.
fn value_set_member(
    values: &[f64],
    constraints: &[BallConstraint],
) -> Result<Option<MeanVector>, FamilyError> {
    let (scan_to, tails) = steady_profile(constraints)?;
    let mut prefix = Vec::with_capacity(scan_to as usize);
    for j in 1..=scan_to {
        let Some((lo, hi)) = intersect_ball_intervals(constraints, j)? else {
            return Ok(None);
        };
        match values.iter().find(|v| (lo..=hi).contains(v)) {
            Some(&v) => prefix.push(v),
            None => return Ok(None),
        }
    }
    let Some(&tail) = values.iter().find(|v| tail_feasible(&tails, **v)) else {
        return Ok(None);
    };
    while prefix.last() == Some(&tail) {
        prefix.pop();
    }
    Ok(Some(MeanVector::explicit(prefix, tail)?))
}

/// Paired coordinates of the round family: each pair is `(1/3, 0)` or
/// `(2/3, 1)`, preferring the former.
fn round_member(constraints: &[BallConstraint]) -> Result<Option<MeanVector>, FamilyError> {
    const OPTIONS: [(f64, f64, bool); 2] = [(THIRD, 0.0, false), (TWO_THIRDS, 1.0, true)];
    let (scan_to, tails) = steady_profile(constraints)?;
    let pairs = scan_to / 2 + 1;
    let mut bits = Vec::with_capacity(pairs as usize);
    for m in 1..=pairs {
        let Some((olo, ohi)) = intersect_ball_intervals(constraints, 2 * m - 1)? else {
            return Ok(None);
        };
        let Some((elo, ehi)) = intersect_ball_intervals(constraints, 2 * m)? else {
            return Ok(None);
        };
        let pick = OPTIONS
            .iter()
            .find(|(odd, even, _)| (olo..=ohi).contains(odd) && (elo..=ehi).contains(even));
        match pick {
            Some((_, _, hi)) => bits.push(*hi),
            None => return Ok(None),
        }
    }
    // Beyond the stored pairs the member repeats its tail option at odd and
    // even coordinates alike, so both values must clear every steady tail.
    let tail_ok = |odd: f64, even: f64| tail_feasible(&tails, odd) && tail_feasible(&tails, even);
    if !tail_ok(THIRD, 0.0) {
        if tail_ok(TWO_THIRDS, 1.0) {
            // Extend the stored choice so the all-(2/3, 1) rule is explicit.
            return Err(FamilyError::Internal(
                "round member search does not support an all-(2/3,1) tail".into(),
            ));
        }
        return Ok(None);
    }
    while bits.last() == Some(&false) {
        bits.pop();
    }
    Ok(Some(round_vector(Arc::new(bits))))
}

/// Branch search: depth-first over branch prefixes deep enough to cover every
/// structurally constrained label, pruning on decided labels, with an exact
/// full verification at each leaf (the candidate branch is fully determined
/// by its prefix plus the all-left extension).
fn tree_member(
    constraints: &[BallConstraint],
    horizon: u64,
) -> Result<Option<MeanVector>, FamilyError> {
    let mut max_len = 1u64;
    let mut max_bits = 0usize;
    for c in constraints {
        match &c.center {
            MeanVector::ExplicitTail { prefix, .. } => {
                max_len = max_len.max(prefix.len() as u64);
            }
            MeanVector::TreeBranch(b) => max_bits = max_bits.max(b.bits().len()),
            MeanVector::Closure { horizon_hint, .. } => {
                return Err(FamilyError::HorizonExceeded {
                    horizon: *horizon_hint,
                    reason: "branch search needs structured ball centers".into(),
                });
            }
        }
    }
    let depth_for_labels = 64 - max_len.leading_zeros() as usize;
    let depth = depth_for_labels.max(max_bits).max(1);
    if depth > 26 {
        return Err(FamilyError::HorizonExceeded {
            horizon,
            reason: format!("branch search depth {depth} exceeds the supported 26"),
        });
    }

    fn dfs(
        bits: &mut Vec<bool>,
        label: u64,
        depth: usize,
        constraints: &[BallConstraint],
        horizon: u64,
    ) -> Result<Option<MeanVector>, FamilyError> {
        if bits.len() == depth {
            let candidate = MeanVector::TreeBranch(
                TreeBranch::new(bits.clone(), TWO_THIRDS, THIRD).expect("valid branch"),
            );
            if satisfies_all(&candidate, constraints, horizon) {
                return Ok(Some(candidate));
            }
            return Ok(None);
        }
        for bit in [false, true] {
            let child = 2 * label + u64::from(bit);
            let sibling = 2 * label + u64::from(!bit);
            // The child joins the branch (value 2/3) and the sibling is now
            // permanently off it (1/3); prune when either is infeasible.
            let child_ok = matches!(
                intersect_ball_intervals(constraints, child)?,
                Some((lo, hi)) if (lo..=hi).contains(&TWO_THIRDS)
            );
            let sibling_ok = matches!(
                intersect_ball_intervals(constraints, sibling)?,
                Some((lo, hi)) if (lo..=hi).contains(&THIRD)
            );
            if child_ok && sibling_ok {
                bits.push(bit);
                if let Some(found) = dfs(bits, child, depth, constraints, horizon)? {
                    return Ok(Some(found));
                }
                bits.pop();
            }
        }
        Ok(None)
    }

    let mut bits = Vec::new();
    dfs(&mut bits, 1, depth, constraints, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanvec::{prefix_linf, DEFAULT_HORIZON};

    fn ball(center: MeanVector, r: f64) -> BallConstraint {
        BallConstraint::new(center, r).unwrap()
    }

    #[test]
    fn prop_all_half_within_unit_ball() {
        let fam = Family::prop(1.0).unwrap();
        let cs = vec![ball(MeanVector::constant(0.5).unwrap(), 1.0)];
        let m = fam.find_member_in_balls(&cs, 64).unwrap().unwrap();
        let half = MeanVector::constant(0.5).unwrap();
        assert_eq!(prefix_linf(&m, &half, 64).unwrap(), 0.0);
    }

    #[test]
    fn prop_reports_empty_intersection() {
        let fam = Family::prop(1.0).unwrap();
        let cs = vec![
            ball(MeanVector::constant(0.1).unwrap(), 0.2),
            ball(MeanVector::constant(0.9).unwrap(), 0.2),
        ];
        assert!(fam.find_member_in_balls(&cs, 64).unwrap().is_none());
    }

    #[test]
    fn tree_siblings_cannot_both_be_marked() {
        // Forcing 2/3 at the root and at both its children is infeasible:
        // a branch passes through exactly one child. Exhausting all depth-2
        // branch prefixes by hand confirms the search.
        let fam = Family::Tree { truth_depth: 8 };
        let center = MeanVector::explicit(vec![0.65, 0.65, 0.65], THIRD).unwrap();
        let cs = vec![ball(center, 0.05)];
        assert!(fam.find_member_in_balls(&cs, 1 << 10).unwrap().is_none());

        for bits in [[false, false], [false, true], [true, false], [true, true]] {
            let b = TreeBranch::new(bits.to_vec(), TWO_THIRDS, THIRD).unwrap();
            let covers_both = b.contains_label(2) && b.contains_label(3);
            assert!(!covers_both);
        }
    }

    #[test]
    fn tree_search_finds_the_constrained_branch() {
        let fam = Family::Tree { truth_depth: 8 };
        // Pin labels 1, 3, 6: the branch 1 -> 3 -> 6 is bits [1, 0].
        let prefix = vec![TWO_THIRDS, THIRD, TWO_THIRDS, THIRD, THIRD, TWO_THIRDS];
        let center = MeanVector::explicit(prefix, THIRD).unwrap();
        let cs = vec![ball(center, 0.01)];
        let m = fam.find_member_in_balls(&cs, 1 << 10).unwrap();
        // The constraint center has tail 1/3, which conflicts with the
        // branch continuing below label 6 taking 2/3 somewhere: radius 0.01
        // cannot absorb that, so there is no member.
        assert!(m.is_none());

        // A branch-structured center pins the whole branch: the only member
        // within a tight ball of the 1 -> 3 -> 6 branch is that branch.
        let center = MeanVector::tree_branch(vec![true, false], TWO_THIRDS, THIRD).unwrap();
        let cs = vec![ball(center, 0.01)];
        let m = fam.find_member_in_balls(&cs, 1 << 10).unwrap().unwrap();
        match &m {
            MeanVector::TreeBranch(b) => {
                assert!(b.contains_label(3) && b.contains_label(6));
            }
            other => panic!("expected a branch vector, got {other:?}"),
        }
    }

    #[test]
    fn countable_none_when_all_excluded() {
        let fam = Family::countable(vec![
            MeanVector::constant(0.2).unwrap(),
            MeanVector::constant(0.8).unwrap(),
        ])
        .unwrap();
        let cs = vec![ball(MeanVector::constant(0.5).unwrap(), 0.1)];
        assert!(fam
            .find_member_in_balls(&cs, DEFAULT_HORIZON)
            .unwrap()
            .is_none());
        let cs = vec![ball(MeanVector::constant(0.5).unwrap(), 0.31)];
        let m = fam
            .find_member_in_balls(&cs, DEFAULT_HORIZON)
            .unwrap()
            .unwrap();
        assert_eq!(m.coord(1).unwrap(), 0.2, "listed order decides ties");
    }

    #[test]
    fn bin_member_prefers_zero() {
        let fam = Family::Bin;
        let center = MeanVector::explicit(vec![0.9, 0.4], 0.4).unwrap();
        let cs = vec![ball(center, 0.45)];
        let m = fam.find_member_in_balls(&cs, 64).unwrap().unwrap();
        assert_eq!(m.coord(1).unwrap(), 1.0, "only 1 fits [0.45, 1.35]");
        assert_eq!(m.coord(2).unwrap(), 0.0, "0 preferred when both fit");
        assert_eq!(m.coord(64).unwrap(), 0.0);
    }

    #[test]
    fn round_member_respects_pairing() {
        let fam = Family::Round;
        // Force the first pair high (0 falls outside the even-coordinate
        // ball), leave every later pair free.
        let center = MeanVector::explicit(vec![TWO_THIRDS, 1.0], 0.5).unwrap();
        let cs = vec![ball(center, 0.5)];
        let m = fam.find_member_in_balls(&cs, 64).unwrap().unwrap();
        assert_eq!(m.coord(1).unwrap(), TWO_THIRDS);
        assert_eq!(m.coord(2).unwrap(), 1.0);
        assert_eq!(m.coord(3).unwrap(), THIRD);
        assert_eq!(m.coord(4).unwrap(), 0.0);
    }

    #[test]
    fn union_search_walks_constituents_in_order() {
        let a = Family::countable(vec![MeanVector::constant(0.9).unwrap()]).unwrap();
        let b = Family::countable(vec![MeanVector::constant(0.3).unwrap()]).unwrap();
        let u = Family::union(vec![a, b]).unwrap();
        let cs = vec![ball(MeanVector::constant(0.35).unwrap(), 0.1)];
        let m = u.find_member_in_balls(&cs, 64).unwrap().unwrap();
        assert_eq!(m.coord(5).unwrap(), 0.3);
    }

    #[test]
    fn empty_constraints_yield_a_default_member() {
        let fam = Family::prop(2.0).unwrap();
        let m = fam.find_member_in_balls(&[], 64).unwrap().unwrap();
        assert_eq!(m.coord(1).unwrap(), 0.5);
    }
}
