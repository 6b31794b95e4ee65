//! Reconstruction of the full value function from subsystem solutions.
//!
//! At every lattice time the candidate value is the maximum of the subsystem
//! values at the projected states; the reconstructed value is the running
//! minimum of the candidates from `t = 0` backward. The running minimum plays
//! the role of the freeze in the full equation.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Axis, GridError, GridSpec, ScalarField};
use crate::pde::{PdeError, TimeSeriesField};

/// Lattice times closer than this are treated as equal.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoupleError {
    #[error("reconstruction needs at least one subsystem solution")]
    Empty,
    #[error("subsystem solutions do not share a time lattice")]
    LatticeMismatch,
    #[error("time {0} is not on the lattice")]
    OffLattice(f64),
    #[error("time {time} is outside [{earliest}, 0]")]
    TimeOutOfRange { time: f64, earliest: f64 },
    #[error("state {point:?} lies outside the grid of subsystem {subsystem}")]
    OutsideDomain { subsystem: usize, point: Vec<f64> },
    #[error("expected a state of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid query: {0}")]
    BadQuery(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// Index of the lattice time reached when `t` is snapped toward 0.
pub fn snap_time(times: &[f64], t: f64) -> Result<usize, DecoupleError> {
    let earliest = *times.last().expect("lattice is non-empty");
    if !t.is_finite() || t > TIME_TOL || t < earliest - TIME_TOL {
        return Err(DecoupleError::TimeOutOfRange { time: t, earliest });
    }
    // times are decreasing; take the last one still at or above t
    Ok(times.iter().rposition(|&s| s >= t - TIME_TOL).unwrap_or(0))
}

fn same_lattice(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= TIME_TOL)
}

/// A value function over the full state that can be queried pointwise.
pub trait ValueFunction: Sync {
    fn full_dim(&self) -> usize;

    /// The shared time lattice, decreasing from 0.
    fn times(&self) -> &[f64];

    fn value(&self, z: &[f64], t: f64) -> Result<f64, DecoupleError>;

    /// Value plus a gradient over the full state.
    fn value_and_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError>;

    /// Gradient for control synthesis. Reconstructions also fill the blocks
    /// of subsystems that do not attain the maximum.
    fn control_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        self.value_and_gradient(z, t)
    }
}

/// Subsystem solutions plus the placement of each subsystem's state inside
/// the full state vector.
#[derive(Debug, Clone)]
pub struct ReconstructionHandle {
    subsolutions: Vec<TimeSeriesField>,
    offsets: Vec<usize>,
    full_dim: usize,
}

impl ReconstructionHandle {
    /// Subsystem `i` occupies `z[offsets[i]..offsets[i] + dim_i]`. Blocks must
    /// not overlap; dimensions of `z` not covered by any block are ignored.
    pub fn new(subsolutions: Vec<TimeSeriesField>, offsets: Vec<usize>, full_dim: usize) -> Result<Self, DecoupleError> {
        let first = subsolutions.first().ok_or(DecoupleError::Empty)?;
        if offsets.len() != subsolutions.len() {
            return Err(DecoupleError::BadQuery(format!(
                "{} offsets for {} subsystems",
                offsets.len(),
                subsolutions.len()
            )));
        }
        if subsolutions.iter().any(|s| !same_lattice(s.times(), first.times())) {
            return Err(DecoupleError::LatticeMismatch);
        }
        let mut used = vec![false; full_dim];
        for (s, &off) in subsolutions.iter().zip(&offsets) {
            let n = s.grid().ndim();
            if off + n > full_dim {
                return Err(DecoupleError::BadQuery(format!("block at {off} of size {n} exceeds state dimension {full_dim}")));
            }
            for u in &mut used[off..off + n] {
                if *u {
                    return Err(DecoupleError::BadQuery(format!("block at {off} overlaps another block")));
                }
                *u = true;
            }
        }
        Ok(ReconstructionHandle { subsolutions, offsets, full_dim })
    }

    /// Subsystem blocks laid out one after another.
    pub fn contiguous(subsolutions: Vec<TimeSeriesField>) -> Result<Self, DecoupleError> {
        let mut offsets = Vec::with_capacity(subsolutions.len());
        let mut next = 0;
        for s in &subsolutions {
            offsets.push(next);
            next += s.grid().ndim();
        }
        Self::new(subsolutions, offsets, next)
    }

    pub fn subsolutions(&self) -> &[TimeSeriesField] {
        &self.subsolutions
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// `(offset, dimension)` of each subsystem block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().zip(&self.subsolutions).map(|(&o, s)| (o, s.grid().ndim()))
    }

    /// The projection of `z` onto subsystem `i`.
    pub fn block<'a>(&self, z: &'a [f64], i: usize) -> &'a [f64] {
        let off = self.offsets[i];
        &z[off..off + self.subsolutions[i].grid().ndim()]
    }

    fn check_state(&self, z: &[f64]) -> Result<(), DecoupleError> {
        if z.len() != self.full_dim {
            return Err(DecoupleError::DimensionMismatch { expected: self.full_dim, got: z.len() });
        }
        for (i, s) in self.subsolutions.iter().enumerate() {
            let x = self.block(z, i);
            if !s.grid().contains(x) {
                return Err(DecoupleError::OutsideDomain { subsystem: i, point: x.to_vec() });
            }
        }
        Ok(())
    }

    /// `max_i V_i(τ_k, x_i)` with the lowest achieving index.
    #[inline]
    fn candidate(&self, z: &[f64], k: usize) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, s) in self.subsolutions.iter().enumerate() {
            let v = s.fields()[k].interpolate_unchecked(self.block(z, i));
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    }

    /// Running minimum down to lattice index `k`, with the achieving time
    /// index (first strict minimum) and subsystem.
    fn running_min(&self, z: &[f64], k: usize) -> (f64, usize, usize) {
        let (mut val, mut arg_i) = self.candidate(z, 0);
        let mut arg_t = 0;
        for j in 1..=k {
            let (v, i) = self.candidate(z, j);
            if v < val {
                val = v;
                arg_t = j;
                arg_i = i;
            }
        }
        (val, arg_t, arg_i)
    }
}

/// Evaluates the reconstruction at one state; `t` snaps toward 0.
pub fn reconstruct_point(handle: &ReconstructionHandle, z: &[f64], t: f64) -> Result<f64, DecoupleError> {
    handle.check_state(z)?;
    let k = snap_time(handle.times(), t)?;
    Ok(handle.running_min(z, k).0)
}

/// Value and gradient. The gradient block of the maximizing subsystem at the
/// minimizing time is the sampled gradient of that subsystem's snapshot;
/// other blocks are zero.
pub fn value_and_gradient(handle: &ReconstructionHandle, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
    handle.check_state(z)?;
    let k = snap_time(handle.times(), t)?;
    let (val, arg_t, arg_i) = handle.running_min(z, k);
    let mut grad = vec![0.0; handle.full_dim];
    let g = handle.subsolutions[arg_i].fields()[arg_t].sampled_gradient(handle.block(z, arg_i))?;
    let off = handle.offsets[arg_i];
    grad[off..off + g.len()].copy_from_slice(&g);
    Ok((val, grad))
}

impl ValueFunction for ReconstructionHandle {
    fn full_dim(&self) -> usize {
        self.full_dim
    }

    fn times(&self) -> &[f64] {
        self.subsolutions[0].times()
    }

    fn value(&self, z: &[f64], t: f64) -> Result<f64, DecoupleError> {
        reconstruct_point(self, z, t)
    }

    fn value_and_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        value_and_gradient(self, z, t)
    }

    /// Every block holds its own subsystem's gradient at the minimizing
    /// time. Blocks too close to their grid boundary stay zero, except the
    /// maximizing one, which errors as in `value_and_gradient`.
    fn control_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        self.check_state(z)?;
        let k = snap_time(self.times(), t)?;
        let (val, arg_t, arg_i) = self.running_min(z, k);
        let mut grad = vec![0.0; self.full_dim];
        for (i, s) in self.subsolutions.iter().enumerate() {
            let g = match s.fields()[arg_t].sampled_gradient(self.block(z, i)) {
                Ok(g) => g,
                Err(e) if i == arg_i => return Err(e.into()),
                Err(_) => continue,
            };
            let off = self.offsets[i];
            grad[off..off + g.len()].copy_from_slice(&g);
        }
        Ok((val, grad))
    }
}

/// A directly solved full-state value function; off-lattice times snap
/// toward 0 and states are interpolated.
impl ValueFunction for TimeSeriesField {
    fn full_dim(&self) -> usize {
        self.grid().ndim()
    }

    fn times(&self) -> &[f64] {
        TimeSeriesField::times(self)
    }

    fn value(&self, z: &[f64], t: f64) -> Result<f64, DecoupleError> {
        let k = snap_time(self.times(), t)?;
        Ok(self.fields()[k].interpolate(z)?)
    }

    fn value_and_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        let k = snap_time(self.times(), t)?;
        let f = &self.fields()[k];
        Ok((f.interpolate(z)?, f.sampled_gradient(z)?))
    }
}

/// One axis of a query domain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryAxis {
    /// The full-state coordinate is held at this value.
    Fixed(f64),
    /// The coordinate is sampled on a uniform axis.
    Range(Axis),
}

/// A region of the full state space to reconstruct on: a product grid over
/// the `Range` axes with the `Fixed` coordinates held constant.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QueryDomain {
    pub axes: Vec<QueryAxis>,
}

impl QueryDomain {
    pub fn full(grid: &GridSpec) -> Self {
        QueryDomain { axes: grid.axes().iter().map(|a| QueryAxis::Range(*a)).collect() }
    }

    /// The grid over the free axes, or `None` when every axis is fixed.
    pub fn output_grid(&self) -> Result<Option<GridSpec>, DecoupleError> {
        let axes: Vec<Axis> = self
            .axes
            .iter()
            .filter_map(|a| match a {
                QueryAxis::Range(ax) => Some(*ax),
                QueryAxis::Fixed(_) => None,
            })
            .collect();
        if axes.is_empty() {
            return Ok(None);
        }
        Ok(Some(GridSpec::new(axes)?))
    }

    fn fill_state(&self, grid: &GridSpec, flat: usize, z: &mut [f64], free: &mut [f64]) {
        grid.node_point_into(flat, free);
        let mut next = 0;
        for (slot, a) in z.iter_mut().zip(&self.axes) {
            *slot = match a {
                QueryAxis::Fixed(x) => *x,
                QueryAxis::Range(_) => {
                    next += 1;
                    free[next - 1]
                }
            };
        }
    }
}

/// Reconstructs on a query domain at every lattice time from 0 down to
/// `upto_time`, which must lie on the lattice. At least one axis must be a
/// range.
pub fn reconstruct_domain(
    handle: &ReconstructionHandle,
    query: &QueryDomain,
    upto_time: f64,
) -> Result<TimeSeriesField, DecoupleError> {
    if query.axes.len() != handle.full_dim {
        return Err(DecoupleError::DimensionMismatch { expected: handle.full_dim, got: query.axes.len() });
    }
    let times = handle.times();
    let k = snap_time(times, upto_time)?;
    if (times[k] - upto_time).abs() > TIME_TOL {
        return Err(DecoupleError::OffLattice(upto_time));
    }
    let grid = query
        .output_grid()?
        .ok_or_else(|| DecoupleError::BadQuery("every axis is fixed; use reconstruct_point".into()))?;
    let nfree = grid.ndim();

    // check the bounding corners of the query against every subsystem grid
    let corners = query_corners(query);
    for c in &corners {
        handle.check_state(c)?;
    }

    let n = grid.len();
    let mut fields = Vec::with_capacity(k + 1);
    let mut current = vec![0.0; n];
    for j in 0..=k {
        current.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
            let mut z = vec![0.0; handle.full_dim];
            let mut free = vec![0.0; nfree];
            for (m, slot) in chunk.iter_mut().enumerate() {
                query.fill_state(&grid, c * 1024 + m, &mut z, &mut free);
                let v = handle.candidate(&z, j).0;
                *slot = if j == 0 { v } else { slot.min(v) };
            }
        });
        fields.push(ScalarField::from_parts(grid.clone(), current.clone()));
    }
    Ok(TimeSeriesField::new(times[..=k].to_vec(), fields)?)
}

fn query_corners(query: &QueryDomain) -> Vec<Vec<f64>> {
    let mut corners = vec![Vec::with_capacity(query.axes.len())];
    for a in &query.axes {
        match a {
            QueryAxis::Fixed(x) => corners.iter_mut().for_each(|c| c.push(*x)),
            QueryAxis::Range(ax) => {
                let mut next = Vec::with_capacity(corners.len() * 2);
                for c in corners {
                    for end in [ax.lower, ax.upper] {
                        let mut c2 = c.clone();
                        c2.push(end);
                        next.push(c2);
                    }
                }
                corners = next;
            }
        }
    }
    corners
}

/// Pointwise minimum of several value functions, whose zero sublevel set is
/// the union of theirs.
pub fn compose_union(inputs: &[&dyn ValueFunction], z: &[f64], t: f64) -> Result<f64, DecoupleError> {
    let first = inputs.first().ok_or(DecoupleError::Empty)?;
    if inputs.iter().any(|v| !same_lattice(v.times(), first.times())) {
        return Err(DecoupleError::LatticeMismatch);
    }
    let mut best = f64::INFINITY;
    for v in inputs {
        best = best.min(v.value(z, t)?);
    }
    Ok(best)
}

/// Owned union of value functions sharing one lattice. The gradient is taken
/// from the lowest-index minimizing member.
pub struct UnionValue {
    members: Vec<Box<dyn ValueFunction + Send>>,
}

impl UnionValue {
    pub fn new(members: Vec<Box<dyn ValueFunction + Send>>) -> Result<Self, DecoupleError> {
        let first = members.first().ok_or(DecoupleError::Empty)?;
        if members.iter().any(|m| m.full_dim() != first.full_dim()) {
            return Err(DecoupleError::DimensionMismatch { expected: first.full_dim(), got: 0 });
        }
        if members.iter().any(|m| !same_lattice(m.times(), first.times())) {
            return Err(DecoupleError::LatticeMismatch);
        }
        Ok(UnionValue { members })
    }

    pub fn members(&self) -> &[Box<dyn ValueFunction + Send>] {
        &self.members
    }
}

impl ValueFunction for UnionValue {
    fn full_dim(&self) -> usize {
        self.members[0].full_dim()
    }

    fn times(&self) -> &[f64] {
        self.members[0].times()
    }

    fn value(&self, z: &[f64], t: f64) -> Result<f64, DecoupleError> {
        let refs: Vec<&dyn ValueFunction> = self.members.iter().map(|m| m.as_ref() as &dyn ValueFunction).collect();
        compose_union(&refs, z, t)
    }

    fn value_and_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for m in &self.members {
            let (v, g) = m.value_and_gradient(z, t)?;
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, g));
            }
        }
        Ok(best.expect("union has members"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2() -> GridSpec {
        GridSpec::uniform(2, 11, -5.0, 5.0).unwrap()
    }

    /// Snapshots `f(x) + g(k)` on the lattice `0, -0.1, ...`.
    fn series(nt: usize, f: impl Fn(&[f64]) -> f64, g: impl Fn(usize) -> f64) -> TimeSeriesField {
        let grid = grid2();
        let times = (0..nt).map(|k| -0.1 * k as f64).collect();
        let fields = (0..nt)
            .map(|k| {
                let base = ScalarField::from_fn(&grid, &f);
                let shift = g(k);
                ScalarField::new(grid.clone(), base.data().iter().map(|v| v + shift).collect()).unwrap()
            })
            .collect();
        TimeSeriesField::new(times, fields).unwrap()
    }

    fn wavy(nt: usize, phase: f64) -> TimeSeriesField {
        let grid = grid2();
        let times = (0..nt).map(|k| -0.1 * k as f64).collect();
        let fields = (0..nt)
            .map(|k| ScalarField::from_fn(&grid, |p| (p[0] + phase * k as f64).sin() + 0.3 * p[1] - 0.2 * k as f64 * (p[1] * phase).cos()))
            .collect();
        TimeSeriesField::new(times, fields).unwrap()
    }

    fn l1(p: &[f64]) -> f64 {
        p[0].abs() - 1.0
    }

    fn l2(p: &[f64]) -> f64 {
        p[0].abs() - 2.0
    }

    #[test]
    fn initial_time_is_target() {
        let h = ReconstructionHandle::contiguous(vec![wavy(5, 0.7), wavy(5, -0.4)]).unwrap();
        let z = [0.3, -1.2, 2.2, 4.1];
        let a = h.subsolutions()[0].fields()[0].interpolate(&z[..2]).unwrap();
        let b = h.subsolutions()[1].fields()[0].interpolate(&z[2..]).unwrap();
        assert_eq!(reconstruct_point(&h, &z, 0.0).unwrap(), a.max(b));

        let h = ReconstructionHandle::contiguous(vec![series(3, l1, |_| 0.0), series(3, l2, |_| 0.0)]).unwrap();
        let z = [0.0, 0.0, 4.0, 0.0];
        assert!((reconstruct_point(&h, &z, 0.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn static_subsystems_keep_target() {
        let h = ReconstructionHandle::contiguous(vec![series(6, l1, |_| 0.0), series(6, l2, |_| 0.0)]).unwrap();
        let q = QueryDomain::full(&GridSpec::uniform(4, 7, -3.0, 3.0).unwrap());
        let out = reconstruct_domain(&h, &q, -0.5).unwrap();
        for f in out.fields() {
            assert_eq!(f, out.terminal());
        }
        let z = [0.5, 0.0, -1.5, 0.0];
        assert_eq!(reconstruct_point(&h, &z, -0.5).unwrap(), (0.5f64 - 1.0).max(1.5 - 2.0));
    }

    #[test]
    fn running_min_freezes_values() {
        // subsystem values rise back after dipping; the reconstruction keeps the dip
        let h = ReconstructionHandle::contiguous(vec![series(5, |_| 1.0, |k| [0.0, -0.5, -1.0, 0.5, 2.0][k])]).unwrap();
        let z = [0.0, 0.0];
        let vals: Vec<f64> = (0..5).map(|k| reconstruct_point(&h, &z, -0.1 * k as f64).unwrap()).collect();
        assert_eq!(vals, vec![1.0, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn time_snapping() {
        let h = ReconstructionHandle::contiguous(vec![series(5, |_| 1.0, |k| -(k as f64))]).unwrap();
        let z = [0.0, 0.0];
        assert_eq!(reconstruct_point(&h, &z, -0.25).unwrap(), -1.0);
        assert_eq!(reconstruct_point(&h, &z, -0.2).unwrap(), -1.0);
        assert_eq!(reconstruct_point(&h, &z, -0.4).unwrap(), -3.0);
        assert!(matches!(reconstruct_point(&h, &z, -0.41), Err(DecoupleError::TimeOutOfRange { .. })));
        assert!(matches!(reconstruct_point(&h, &z, 0.01), Err(DecoupleError::TimeOutOfRange { .. })));
        let q = QueryDomain::full(&grid2());
        assert_eq!(reconstruct_domain(&h, &q, -0.25), Err(DecoupleError::OffLattice(-0.25)));
    }

    #[test]
    fn handle_validation() {
        let a = series(5, l1, |_| 0.0);
        let b = series(4, l1, |_| 0.0);
        assert_eq!(ReconstructionHandle::contiguous(vec![a.clone(), b]).unwrap_err(), DecoupleError::LatticeMismatch);
        assert!(ReconstructionHandle::new(vec![a.clone(), a.clone()], vec![0, 1], 4).is_err());
        assert!(ReconstructionHandle::new(vec![a.clone()], vec![3], 4).is_err());
        assert!(ReconstructionHandle::contiguous(vec![]).is_err());
        let h = ReconstructionHandle::new(vec![a], vec![2], 4).unwrap();
        // the uncovered block is ignored
        assert_eq!(h.value(&[100.0, 100.0, 0.0, 0.0], 0.0).unwrap(), -1.0);
        assert!(matches!(h.value(&[0.0, 0.0, 6.0, 0.0], 0.0), Err(DecoupleError::OutsideDomain { subsystem: 0, .. })));
        assert!(matches!(h.value(&[0.0, 0.0], 0.0), Err(DecoupleError::DimensionMismatch { .. })));
    }

    #[test]
    fn domain_matches_points_and_slices() {
        let h = ReconstructionHandle::contiguous(vec![wavy(6, 0.7), wavy(6, -0.4)]).unwrap();
        let full_grid = GridSpec::uniform(4, 9, -4.0, 4.0).unwrap();
        let full = reconstruct_domain(&h, &QueryDomain::full(&full_grid), -0.5).unwrap();
        assert_eq!(full.times().len(), 6);

        for flat in (0..full_grid.len()).step_by(37) {
            let z = full_grid.node_point(flat);
            for (k, f) in full.fields().iter().enumerate() {
                assert_eq!(f.data()[flat], reconstruct_point(&h, &z, -0.1 * k as f64).unwrap());
            }
        }

        // slice at the node value v = 1 on axes 1 and 3
        let ax = *full_grid.axis(0);
        let q = QueryDomain {
            axes: vec![QueryAxis::Range(ax), QueryAxis::Fixed(1.0), QueryAxis::Range(ax), QueryAxis::Fixed(1.0)],
        };
        let slice = reconstruct_domain(&h, &q, -0.5).unwrap();
        assert_eq!(slice.grid().ndim(), 2);
        for (fs, ff) in slice.fields().iter().zip(full.fields()) {
            for i in 0..9 {
                for j in 0..9 {
                    assert_eq!(fs.value_at(&[i, j]).unwrap(), ff.value_at(&[i, 5, j, 5]).unwrap());
                }
            }
        }

        let all_fixed = QueryDomain { axes: vec![QueryAxis::Fixed(0.0); 4] };
        assert!(matches!(reconstruct_domain(&h, &all_fixed, 0.0), Err(DecoupleError::BadQuery(_))));
        let too_big = QueryDomain::full(&GridSpec::uniform(4, 9, -6.0, 6.0).unwrap());
        assert!(matches!(reconstruct_domain(&h, &too_big, 0.0), Err(DecoupleError::OutsideDomain { .. })));
    }

    #[test]
    fn gradient_follows_the_maximizer() {
        let h = ReconstructionHandle::contiguous(vec![series(3, l1, |_| 0.0), series(3, l2, |_| 0.0)]).unwrap();
        // l1 = 2 > l2 = -2
        let (v, g) = value_and_gradient(&h, &[3.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0]);
        // l2 wins
        let (_, g) = value_and_gradient(&h, &[0.5, 0.0, -3.5, 0.0], -0.2).unwrap();
        assert_eq!(g, vec![0.0, 0.0, -1.0, 0.0]);
        // ties go to the lowest index
        let h = ReconstructionHandle::contiguous(vec![series(3, l1, |_| 0.0), series(3, l1, |_| 0.0)]).unwrap();
        let (_, g) = value_and_gradient(&h, &[2.0, 0.0, 2.0, 0.0], 0.0).unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(value_and_gradient(&h, &[4.5, 0.0, 0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn gradient_uses_argmin_time() {
        let times = vec![0.0, -0.1, -0.2];
        let g = grid2();
        let fields = vec![
            ScalarField::from_fn(&g, |p| p[0] + 3.0),
            ScalarField::from_fn(&g, |p| -2.0 * p[1] - 1.0),
            ScalarField::from_fn(&g, |p| p[0] + 10.0),
        ];
        let h = ReconstructionHandle::contiguous(vec![TimeSeriesField::new(times, fields).unwrap()]).unwrap();
        let (v, grad) = value_and_gradient(&h, &[0.0, 0.0], -0.2).unwrap();
        assert_eq!(v, -1.0);
        assert!((grad[0]).abs() < 1e-12 && (grad[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn union_composition() {
        let a = ReconstructionHandle::new(vec![series(4, l1, |k| -0.1 * k as f64)], vec![0], 4).unwrap();
        let b = ReconstructionHandle::new(vec![series(4, l2, |_| 0.0)], vec![2], 4).unwrap();
        let z = [2.0, 0.0, 3.0, 0.0];
        let va = a.value(&z, -0.3).unwrap();
        let vb = b.value(&z, -0.3).unwrap();
        assert_eq!(compose_union(&[&a, &a], &z, -0.3).unwrap(), va);
        assert_eq!(compose_union(&[&a, &b], &z, -0.3).unwrap(), va.min(vb));

        let positive = ReconstructionHandle::new(vec![series(4, |_| 50.0, |_| 0.0)], vec![0], 4).unwrap();
        assert_eq!(compose_union(&[&positive, &b], &z, -0.1).unwrap(), b.value(&z, -0.1).unwrap());

        let short = ReconstructionHandle::new(vec![series(3, l1, |_| 0.0)], vec![0], 4).unwrap();
        assert_eq!(compose_union(&[&a, &short], &z, 0.0), Err(DecoupleError::LatticeMismatch));
        assert!(compose_union(&[], &z, 0.0).is_err());

        let u = UnionValue::new(vec![Box::new(a.clone()), Box::new(b.clone())]).unwrap();
        let (v, g) = u.value_and_gradient(&[1.5, 0.0, 4.0, 0.0], 0.0).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_field_as_value_function() {
        let s = series(3, |p| p[0] + p[1], |k| -(k as f64));
        assert_eq!(s.value(&[1.0, 2.0], -0.15).unwrap(), 2.0);
        let (_, g) = s.value_and_gradient(&[1.0, 2.0], 0.0).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(z in proptest::collection::vec(-4.5f64..4.5, 4), k in 0usize..8) {
            let h = ReconstructionHandle::contiguous(vec![wavy(8, 0.7), wavy(8, -0.4)]).unwrap();
            let t = -0.1 * k as f64;
            let v = reconstruct_point(&h, &z, t).unwrap();
            let cand = h.candidate(&z, k).0;
            prop_assert!(v <= cand);
            if k > 0 {
                prop_assert!(v <= reconstruct_point(&h, &z, t + 0.1).unwrap());
            }
        }

        #[test]
        fn coarser_lattice_never_lower(z in proptest::collection::vec(-4.5f64..4.5, 4)) {
            let full = [wavy(9, 0.7), wavy(9, -0.4)];
            let sub: Vec<TimeSeriesField> = full
                .iter()
                .map(|s| {
                    let idx: Vec<usize> = (0..9).step_by(2).collect();
                    TimeSeriesField::new(idx.iter().map(|&i| s.times()[i]).collect(), idx.iter().map(|&i| s.fields()[i].clone()).collect()).unwrap()
                })
                .collect();
            let hf = ReconstructionHandle::contiguous(full.to_vec()).unwrap();
            let hs = ReconstructionHandle::contiguous(sub).unwrap();
            prop_assert!(hs.value(&z, -0.8).unwrap() >= hf.value(&z, -0.8).unwrap());
        }

        #[test]
        fn point_matches_domain(z in proptest::collection::vec(-4.0f64..3.0, 4)) {
            let h = ReconstructionHandle::contiguous(vec![wavy(4, 0.7), wavy(4, -0.4)]).unwrap();
            let q = QueryDomain { axes: z.iter().map(|&x| QueryAxis::Range(Axis::new(7, x, x + 0.6))).collect() };
            let out = reconstruct_domain(&h, &q, -0.3).unwrap();
            for (k, f) in out.fields().iter().enumerate() {
                prop_assert_eq!(f.data()[0], reconstruct_point(&h, &z, -0.1 * k as f64).unwrap());
            }
        }
    }
}
