//! Countable cover enumerators.
//!
//! A cover at tolerance `eps` is a countable set of mean vectors such that
//! every member of the collection has a cover element within `eps` in the
//! sup norm. Covers are consumed as deterministic streams (`q^1, q^2, ...`);
//! the cover-scan estimator walks the stream and keeps the first candidate
//! consistent with the sample.
//!
//! For the `Prop { c }` family the cover is a grid: only coordinates
//! `j <= j_eps = ceil(c^2 / eps^2)` can deviate from 1/2 by more than `eps`,
//! so candidates have an explicit prefix of that length (entries on the grid
//! of step `eps/2` inside `[1/2 - c/sqrt(j), 1/2 + c/sqrt(j)]`) and tail 1/2.
//! Grid resolution `eps/2` puts some grid point within `eps/2` of any
//! feasible value, so this is a genuine `eps`-cover, and it is finite, which
//! makes "the scan exhausted every candidate" a decidable event.
//!
//! Enumeration order: per-coordinate grids are ordered center-out from 1/2
//! (ties toward the smaller value) and tuples lexicographically over those
//! orderings, with the last coordinate varying fastest. Any fixed order
//! works for the scan's guarantees; center-out keeps accepted candidates
//! short, because every coordinate the scan does not constrain takes the
//! value 1/2, which is the tail.

use std::sync::Arc;

use crate::meanvec::MeanVector;

/// A cover stream. `Listed` enumerates an explicit list (the 0-cover of a
/// countable family), `Grid` the grid cover described in the module docs,
/// `Chain` a round-robin interleaving used for unions of separable parts.
#[derive(Clone, Debug)]
pub enum CoverEnumerator {
    Listed(ListedCover),
    Grid(GridCover),
    Chain(ChainCover),
}

#[derive(Clone, Debug)]
pub struct ListedCover {
    items: Arc<Vec<MeanVector>>,
    next: usize,
    epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct ChainCover {
    parts: Vec<CoverEnumerator>,
    turn: usize,
    epsilon: f64,
}

impl CoverEnumerator {
    pub(crate) fn listed(items: Arc<Vec<MeanVector>>, epsilon: f64) -> Self {
        CoverEnumerator::Listed(ListedCover {
            items,
            next: 0,
            epsilon,
        })
    }

    pub(crate) fn grid(c: f64, epsilon: f64) -> Self {
        CoverEnumerator::Grid(GridCover::new(c, epsilon))
    }

    pub(crate) fn chain(parts: Vec<CoverEnumerator>, epsilon: f64) -> Self {
        CoverEnumerator::Chain(ChainCover {
            parts,
            turn: 0,
            epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            CoverEnumerator::Listed(l) => l.epsilon,
            CoverEnumerator::Grid(g) => g.epsilon,
            CoverEnumerator::Chain(c) => c.epsilon,
        }
    }

    /// Next candidate in the fixed enumeration order, or `None` when the
    /// stream is exhausted.
    pub fn next_candidate(&mut self) -> Option<MeanVector> {
        match self {
            CoverEnumerator::Listed(l) => {
                let item = l.items.get(l.next)?.clone();
                l.next += 1;
                Some(item)
            }
            CoverEnumerator::Grid(g) => g.next_candidate(),
            CoverEnumerator::Chain(c) => {
                // Round-robin across the parts so every part's elements get
                // a finite index in the interleaved stream.
                let parts = c.parts.len();
                for _ in 0..parts {
                    let turn = c.turn;
                    c.turn = (c.turn + 1) % parts;
                    if let Some(item) = c.parts[turn].next_candidate() {
                        return Some(item);
                    }
                }
                None
            }
        }
    }
}

/// Grid cover of `Prop { c }` at tolerance `epsilon`.
#[derive(Clone, Debug)]
pub struct GridCover {
    c: f64,
    epsilon: f64,
    step: f64,
    j_eps: u64,
    stream: Option<GridStream>,
}

#[derive(Clone, Debug)]
struct GridStream {
    axes: Vec<Vec<f64>>,
    pos: Vec<usize>,
    started: bool,
    done: bool,
}

impl GridCover {
    fn new(c: f64, epsilon: f64) -> Self {
        let j_eps = (c * c / (epsilon * epsilon)).ceil().max(1.0) as u64;
        GridCover {
            c,
            epsilon,
            step: epsilon / 2.0,
            j_eps,
            stream: None,
        }
    }

    /// Number of prefix coordinates the cover makes explicit.
    pub fn prefix_len(&self) -> u64 {
        self.j_eps
    }

    pub fn tail_value(&self) -> f64 {
        0.5
    }

    /// Feasible interval of coordinate `j`, clamped into `[0,1]`.
    fn interval(&self, j: u64) -> (f64, f64) {
        let half = self.c / (j as f64).sqrt();
        ((0.5 - half).max(0.0), (0.5 + half).min(1.0))
    }

    /// Grid values of coordinate `j` as an axis; falls back to the singleton
    /// `{1/2}` when no multiple of the step lands in the (then very narrow)
    /// interval, which keeps the covering property since such coordinates
    /// deviate from 1/2 by less than `eps/4`.
    pub(crate) fn axis(&self, j: u64) -> Axis {
        let (lo, hi) = self.interval(j);
        let step = self.step;
        let mut k_lo = (lo / step).ceil() as i64;
        while (k_lo as f64) * step < lo {
            k_lo += 1;
        }
        while k_lo > i64::MIN && ((k_lo - 1) as f64) * step >= lo {
            k_lo -= 1;
        }
        let mut k_hi = (hi / step).floor() as i64;
        while (k_hi as f64) * step > hi {
            k_hi -= 1;
        }
        while k_hi < i64::MAX && ((k_hi + 1) as f64) * step <= hi {
            k_hi += 1;
        }
        if k_lo > k_hi {
            Axis::singleton(0.5)
        } else {
            Axis {
                k_lo,
                k_hi,
                step,
                single: None,
            }
        }
    }

    /// The analytic core of the cover scan: acceptance of a candidate tests
    /// each coordinate separately, so the first acceptable tuple in the
    /// enumeration order picks, at every coordinate, the first grid value in
    /// center-out order that the window admits. Returns `Err(j)` with the
    /// first coordinate whose window excludes the whole axis (then no
    /// candidate in the entire enumeration is acceptable).
    ///
    /// `windows[j - 1]` is the closed acceptance interval of coordinate `j`;
    /// coordinates beyond the slice are unconstrained and take the axis
    /// center. When 1/2 sits on the grid (any dyadic tolerance) the center
    /// equals the tail on every axis, so the candidate's explicit prefix
    /// never outgrows the tested range no matter how fine the cover is.
    pub(crate) fn first_acceptable(&self, windows: &[(f64, f64)]) -> Result<GridChoice, u64> {
        let explicit = (windows.len() as u64).min(self.j_eps);
        let mut prefix = Vec::with_capacity(explicit as usize);
        let mut positions = Vec::with_capacity(explicit as usize);
        for j in 1..=explicit {
            let (wlo, whi) = windows[j as usize - 1];
            let found = self
                .axis(j)
                .center_out()
                .enumerate()
                .find(|(_, v)| (wlo..=whi).contains(v))
                .ok_or(j)?;
            positions.push(found.0 as u128);
            prefix.push(found.1);
        }
        let half = (0.5 / self.step).round() * self.step;
        if half != 0.5 {
            // Off-grid center: unconstrained coordinates take a value other
            // than the tail and must stay explicit.
            for j in (explicit + 1)..=self.j_eps {
                prefix.push(self.axis(j).center_out().next().expect("axes are nonempty"));
                positions.push(0);
            }
        }
        // Trailing tail values carry no information; trimming them keeps
        // candidates small no matter how deep the cover goes.
        while prefix.last() == Some(&self.tail_value()) {
            prefix.pop();
        }
        let rank = self.rank_of(&positions);
        let candidate =
            MeanVector::explicit(prefix, self.tail_value()).expect("grid values lie in [0,1]");
        Ok(GridChoice { candidate, rank })
    }

    /// 1-based index of the tuple with these per-axis center-out positions in
    /// the enumeration; `None` when the mixed-radix value overflows `u128`.
    fn rank_of(&self, positions: &[u128]) -> Option<u128> {
        let mut rank: u128 = 0;
        let mut suffix: u128 = 1;
        for j in (1..=self.j_eps).rev() {
            let pos = positions.get(j as usize - 1).copied().unwrap_or(0);
            rank = rank.checked_add(pos.checked_mul(suffix)?)?;
            suffix = suffix.checked_mul(self.axis(j).count())?;
        }
        rank.checked_add(1)
    }

    fn next_candidate(&mut self) -> Option<MeanVector> {
        if self.stream.is_none() {
            let axes: Vec<Vec<f64>> = (1..=self.j_eps)
                .map(|j| self.axis(j).center_out().collect())
                .collect();
            self.stream = Some(GridStream {
                pos: vec![0; axes.len()],
                axes,
                started: false,
                done: false,
            });
        }
        let tail = self.tail_value();
        let s = self.stream.as_mut().unwrap();
        if s.done {
            return None;
        }
        if s.started {
            // Odometer with the last coordinate fastest.
            let mut i = s.axes.len();
            loop {
                if i == 0 {
                    s.done = true;
                    return None;
                }
                i -= 1;
                s.pos[i] += 1;
                if s.pos[i] < s.axes[i].len() {
                    break;
                }
                s.pos[i] = 0;
            }
        } else {
            s.started = true;
        }
        let mut prefix: Vec<f64> = s.pos.iter().zip(&s.axes).map(|(&p, a)| a[p]).collect();
        while prefix.last() == Some(&tail) {
            prefix.pop();
        }
        Some(MeanVector::explicit(prefix, tail).expect("grid values lie in [0,1]"))
    }
}

/// First acceptable grid candidate plus its literal index in the
/// enumeration.
pub(crate) struct GridChoice {
    pub candidate: MeanVector,
    pub rank: Option<u128>,
}

/// One coordinate's grid: the multiples `k * step` for `k_lo <= k <= k_hi`,
/// or a singleton fallback.
pub(crate) struct Axis {
    k_lo: i64,
    k_hi: i64,
    step: f64,
    single: Option<f64>,
}

impl Axis {
    fn singleton(v: f64) -> Self {
        Axis {
            k_lo: 0,
            k_hi: 0,
            step: 0.0,
            single: Some(v),
        }
    }

    pub(crate) fn count(&self) -> u128 {
        if self.single.is_some() {
            1
        } else {
            (self.k_hi - self.k_lo + 1) as u128
        }
    }

    /// Values ordered by distance from 1/2, ties toward the smaller value.
    pub(crate) fn center_out(&self) -> CenterOut {
        if let Some(v) = self.single {
            return CenterOut {
                step: 0.0,
                down: 0,
                up: 1,
                k_lo: 0,
                k_hi: 0,
                single: Some(v),
            };
        }
        // Start the two pointers around the grid index nearest 1/2.
        let kf = 0.5 / self.step;
        let down = (kf.floor() as i64).min(self.k_hi);
        CenterOut {
            step: self.step,
            down,
            up: down + 1,
            k_lo: self.k_lo,
            k_hi: self.k_hi,
            single: None,
        }
    }
}

pub(crate) struct CenterOut {
    step: f64,
    down: i64,
    up: i64,
    k_lo: i64,
    k_hi: i64,
    single: Option<f64>,
}

impl Iterator for CenterOut {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if let Some(v) = self.single.take() {
            self.up = self.k_hi + 1;
            self.down = self.k_lo - 1;
            return Some(v);
        }
        let down_ok = self.down >= self.k_lo;
        let up_ok = self.up <= self.k_hi;
        let take_down = match (down_ok, up_ok) {
            (false, false) => return None,
            (true, false) => true,
            (false, true) => false,
            (true, true) => {
                let vd = self.down as f64 * self.step;
                let vu = self.up as f64 * self.step;
                // Tie prefers the smaller value, which is the down side.
                (vd - 0.5).abs() <= (vu - 0.5).abs()
            }
        };
        if take_down {
            let v = self.down as f64 * self.step;
            self.down -= 1;
            Some(v)
        } else {
            let v = self.up as f64 * self.step;
            self.up += 1;
            Some(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;
    use crate::meanvec::prefix_linf;

    #[test]
    fn unit_epsilon_grid_matches_hand_enumeration() {
        // c = 1, eps = 1: one explicit coordinate, grid step 1/2 over [0,1],
        // so the candidate prefixes are exactly {1/2, 0, 1} in center-out
        // order with tail 1/2.
        let mut cover = Family::prop(1.0).unwrap().cover(1.0).unwrap();
        let mut firsts = Vec::new();
        while let Some(c) = cover.next_candidate() {
            firsts.push(c.coord(1).unwrap());
            assert_eq!(c.coord(2).unwrap(), 0.5);
        }
        assert_eq!(firsts, vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn listed_cover_yields_members_in_order() {
        let v1 = MeanVector::constant(0.25).unwrap();
        let v2 = MeanVector::constant(0.75).unwrap();
        let fam = Family::countable(vec![v1.clone(), v2.clone()]).unwrap();
        let mut cover = fam.cover(0.0).unwrap();
        assert_eq!(cover.next_candidate().unwrap().coord(1).unwrap(), 0.25);
        assert_eq!(cover.next_candidate().unwrap().coord(1).unwrap(), 0.75);
        assert!(cover.next_candidate().is_none());
    }

    #[test]
    fn grid_covers_a_fine_mesh_of_members() {
        // Covering check at eps = 1 for c = 1 by exhausting the valid values
        // of q_1: every feasible q_1 must be within eps of some candidate.
        let fam = Family::prop(1.0).unwrap();
        let candidates: Vec<MeanVector> = {
            let mut cover = fam.cover(1.0).unwrap();
            std::iter::from_fn(|| cover.next_candidate()).collect()
        };
        for step in 0..=1000 {
            let q1 = step as f64 / 1000.0;
            let member = MeanVector::explicit(vec![q1], 0.5).unwrap();
            let within = candidates
                .iter()
                .any(|c| prefix_linf(c, &member, 64).unwrap() < 1.0);
            assert!(within, "q1 = {q1} uncovered");
        }
    }

    #[test]
    fn grid_covers_random_members_statistically() {
        // 1000 seeded members, eps = 1/2: some candidate among the full
        // (finite) enumeration is strictly within eps on the explicit
        // coordinates and agrees with the tail exactly. Zero failures
        // allowed.
        let fam = Family::prop(1.0).unwrap();
        let eps = 0.5;
        let candidates: Vec<MeanVector> = {
            let mut cover = fam.cover(eps).unwrap();
            std::iter::from_fn(|| cover.next_candidate()).collect()
        };
        let j_eps = 4u64;
        for seed in 0..1000 {
            let member = fam.random_truth(seed, 64);
            let covered = candidates.iter().any(|c| {
                prefix_linf(c, &member, j_eps).unwrap() < eps
                    && c.coord(j_eps + 1).unwrap() == 0.5
            });
            // Tail agreement: beyond j_eps the member deviates from 1/2 by
            // at most c/sqrt(j) < eps, and candidates are exactly 1/2 there.
            let tail_fine = (j_eps + 1..=64).all(|j| {
                (member.coord(j).unwrap() - 0.5).abs() < eps
            });
            assert!(covered && tail_fine, "seed {seed} uncovered");
        }
    }

    #[test]
    fn center_out_order_is_distance_sorted() {
        let cover = GridCover::new(1.0, 0.25);
        for j in 1..=16u64 {
            let vals: Vec<f64> = cover.axis(j).center_out().collect();
            assert_eq!(vals.len() as u128, cover.axis(j).count());
            for w in vals.windows(2) {
                let (d0, d1) = ((w[0] - 0.5).abs(), (w[1] - 0.5).abs());
                assert!(
                    d0 < d1 || (d0 == d1 && w[0] < w[1]),
                    "axis {j} out of order: {w:?}"
                );
            }
        }
    }

    #[test]
    fn first_acceptable_matches_literal_stream_scan() {
        // Oracle equivalence on a small grid: the analytic choice equals the
        // first stream candidate passing the same per-coordinate windows.
        let fam = Family::prop(1.0).unwrap();
        for (target, tol) in [(0.7, 0.3), (0.2, 0.45), (0.5, 0.26), (0.9, 0.42)] {
            let windows = vec![(target - tol, target + tol); 1];
            let grid = match fam.cover(1.0).unwrap() {
                CoverEnumerator::Grid(g) => g,
                _ => unreachable!(),
            };
            let analytic = grid.first_acceptable(&windows);

            let mut stream = fam.cover(1.0).unwrap();
            let mut literal = None;
            let mut index: u128 = 0;
            while let Some(c) = stream.next_candidate() {
                index += 1;
                let pass = windows.iter().enumerate().all(|(idx, &(wlo, whi))| {
                    let v = c.coord(idx as u64 + 1).unwrap();
                    (wlo..=whi).contains(&v)
                });
                if pass {
                    literal = Some((c, index));
                    break;
                }
            }
            match (analytic, literal) {
                (Ok(choice), Some((lit, idx))) => {
                    assert_eq!(prefix_linf(&choice.candidate, &lit, 8).unwrap(), 0.0);
                    assert_eq!(choice.rank, Some(idx));
                }
                (Err(_), None) => {}
                (a, l) => panic!("analytic {:?} vs literal {:?}", a.is_ok(), l.is_some()),
            }
        }
    }

    #[test]
    fn window_missing_the_axis_is_reported() {
        let grid = GridCover::new(1.0, 0.5);
        // Coordinate 4's interval is [0,1] with step 1/4; a window around
        // 2.0 admits nothing.
        let windows = vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (1.9, 2.1)];
        assert_eq!(grid.first_acceptable(&windows).err(), Some(4));
    }
}
