//! Decoupled subsystem dynamics and their closed-form game Hamiltonians.
//!
//! Player 1 (control `u`) maximizes and Player 2 (disturbance `d`)
//! minimizes the inner product of the costate with the vector field. Both
//! subsystem kinds are affine in each control, so the saddle point sits at a
//! bound chosen by the sign of the relevant costate coefficient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{which} = {value} lies outside [{lo}, {hi}]")]
    ControlOutOfBounds { which: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("system has no subsystems")]
    NoSubsystems,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, DynamicsError> {
        if !(lo <= hi) {
            return Err(DynamicsError::EmptyInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// `[-bound, bound]`
    pub fn symmetric(bound: f64) -> Self {
        Interval { lo: -bound.abs(), hi: bound.abs() }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Upper bound when `coeff >= 0`, lower bound otherwise.
    #[inline]
    pub fn bang(&self, coeff: f64) -> f64 {
        if coeff >= 0.0 {
            self.hi
        } else {
            self.lo
        }
    }

    /// `n` evenly spaced samples including both endpoints.
    pub fn samples(&self, n: usize) -> Vec<f64> {
        if n <= 1 || self.lo == self.hi {
            return vec![self.lo; n.max(1)];
        }
        (0..n)
            .map(|k| if k + 1 == n { self.hi } else { self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64 })
            .collect()
    }
}

/// Anything the PDE solver can integrate: a Hamiltonian over a state grid
/// plus per-dimension Lax-Friedrichs dissipation bounds.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;

    /// `max_u min_d costate . f(state, u, d)`; lengths are not checked.
    fn hamiltonian_unchecked(&self, state: &[f64], costate: &[f64]) -> f64;

    /// Upper bounds on `|dH/dq_i|` over the grid, one per state dimension.
    fn dissipation_bounds(&self, grid: &GridSpec) -> Result<Vec<f64>, DynamicsError>;

    fn hamiltonian(&self, state: &[f64], costate: &[f64]) -> Result<f64, DynamicsError> {
        check_len(state, self.state_dim())?;
        check_len(costate, self.state_dim())?;
        Ok(self.hamiltonian_unchecked(state, costate))
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<(), DynamicsError> {
    if v.len() != expected {
        return Err(DynamicsError::DimensionMismatch { expected, got: v.len() });
    }
    Ok(())
}

/// Saddle-point controls for a single subsystem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalControls {
    pub u: f64,
    pub d: f64,
}

/// One decoupled component of a relative pursuit-evasion system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subsystem {
    /// State `(p_r, v_r)`: `p_r' = v_r`, `v_r' = u - d`.
    DoubleIntegrator { u_bound: Interval, d_bound: Interval },
    /// State `(p_r, v_r, v_1)`: `p_r' = v_r`, `v_r' = u - d`, `v_1' = u`.
    RelativeDoubleIntegrator { u_bound: Interval, d_bound: Interval },
}

impl Subsystem {
    pub fn u_bound(&self) -> Interval {
        match *self {
            Subsystem::DoubleIntegrator { u_bound, .. }
            | Subsystem::RelativeDoubleIntegrator { u_bound, .. } => u_bound,
        }
    }

    pub fn d_bound(&self) -> Interval {
        match *self {
            Subsystem::DoubleIntegrator { d_bound, .. }
            | Subsystem::RelativeDoubleIntegrator { d_bound, .. } => d_bound,
        }
    }

    /// Bang-bang saddle controls. A zero switching coefficient resolves to
    /// the upper bound.
    pub fn optimal_controls(&self, state: &[f64], costate: &[f64]) -> Result<OptimalControls, DynamicsError> {
        check_len(state, self.state_dim())?;
        check_len(costate, self.state_dim())?;
        Ok(self.optimal_controls_unchecked(costate))
    }

    #[inline]
    pub(crate) fn optimal_controls_unchecked(&self, costate: &[f64]) -> OptimalControls {
        match *self {
            Subsystem::DoubleIntegrator { u_bound, d_bound } => {
                OptimalControls { u: u_bound.bang(costate[1]), d: d_bound.bang(costate[1]) }
            }
            Subsystem::RelativeDoubleIntegrator { u_bound, d_bound } => OptimalControls {
                u: u_bound.bang(costate[1] + costate[2]),
                d: d_bound.bang(costate[1]),
            },
        }
    }

    pub fn flow(&self, state: &[f64], u: f64, d: f64) -> Result<Vec<f64>, DynamicsError> {
        check_len(state, self.state_dim())?;
        let (ub, db) = (self.u_bound(), self.d_bound());
        if !ub.contains(u) {
            return Err(DynamicsError::ControlOutOfBounds { which: "u", value: u, lo: ub.lo, hi: ub.hi });
        }
        if !db.contains(d) {
            return Err(DynamicsError::ControlOutOfBounds { which: "d", value: d, lo: db.lo, hi: db.hi });
        }
        let mut out = vec![0.0; self.state_dim()];
        self.flow_into(state, u, d, &mut out);
        Ok(out)
    }

    #[inline]
    pub(crate) fn flow_into(&self, state: &[f64], u: f64, d: f64, out: &mut [f64]) {
        out[0] = state[1];
        out[1] = u - d;
        if let Subsystem::RelativeDoubleIntegrator { .. } = self {
            out[2] = u;
        }
    }
}

impl Dynamics for Subsystem {
    fn state_dim(&self) -> usize {
        match self {
            Subsystem::DoubleIntegrator { .. } => 2,
            Subsystem::RelativeDoubleIntegrator { .. } => 3,
        }
    }

    #[inline]
    fn hamiltonian_unchecked(&self, state: &[f64], costate: &[f64]) -> f64 {
        let c = self.optimal_controls_unchecked(costate);
        match self {
            Subsystem::DoubleIntegrator { .. } => costate[0] * state[1] + costate[1] * (c.u - c.d),
            Subsystem::RelativeDoubleIntegrator { .. } => {
                costate[0] * state[1] + (costate[1] + costate[2]) * c.u - costate[1] * c.d
            }
        }
    }

    fn dissipation_bounds(&self, grid: &GridSpec) -> Result<Vec<f64>, DynamicsError> {
        if grid.ndim() != self.state_dim() {
            return Err(DynamicsError::DimensionMismatch { expected: self.state_dim(), got: grid.ndim() });
        }
        let (ub, db) = (self.u_bound(), self.d_bound());
        let v = grid.axis(1);
        let alpha_p = v.lower.abs().max(v.upper.abs());
        let alpha_v = (ub.hi - db.lo).abs().max((ub.lo - db.hi).abs());
        Ok(match self {
            Subsystem::DoubleIntegrator { .. } => vec![alpha_p, alpha_v],
            Subsystem::RelativeDoubleIntegrator { .. } => vec![alpha_p, alpha_v, ub.max_abs()],
        })
    }
}

/// An ordered collection of subsystems whose states concatenate into the
/// full state `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledSystem {
    subsystems: Vec<Subsystem>,
    offsets: Vec<usize>,
}

impl DecoupledSystem {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self, DynamicsError> {
        if subsystems.is_empty() {
            return Err(DynamicsError::NoSubsystems);
        }
        let mut offsets = Vec::with_capacity(subsystems.len());
        let mut at = 0;
        for s in &subsystems {
            offsets.push(at);
            at += s.state_dim();
        }
        Ok(DecoupledSystem { subsystems, offsets })
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    /// Index of the first full-state coordinate of each subsystem.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// State dimension of each subsystem.
    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.state_dim()).collect()
    }

    /// Slice of `z` belonging to subsystem `i`.
    pub fn block<'a>(&self, z: &'a [f64], i: usize) -> &'a [f64] {
        let start = self.offsets[i];
        &z[start..start + self.subsystems[i].state_dim()]
    }
}

impl Dynamics for DecoupledSystem {
    fn state_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.state_dim()).sum()
    }

    /// The decoupled Hamiltonian is the sum of the subsystem Hamiltonians
    /// over their costate blocks.
    fn hamiltonian_unchecked(&self, state: &[f64], costate: &[f64]) -> f64 {
        self.subsystems
            .iter()
            .zip(&self.offsets)
            .map(|(s, &o)| {
                let n = s.state_dim();
                s.hamiltonian_unchecked(&state[o..o + n], &costate[o..o + n])
            })
            .sum()
    }

    fn dissipation_bounds(&self, grid: &GridSpec) -> Result<Vec<f64>, DynamicsError> {
        if grid.ndim() != self.state_dim() {
            return Err(DynamicsError::DimensionMismatch { expected: self.state_dim(), got: grid.ndim() });
        }
        let mut out = Vec::with_capacity(grid.ndim());
        for (s, &o) in self.subsystems.iter().zip(&self.offsets) {
            let axes = grid.axes()[o..o + s.state_dim()].to_vec();
            let sub = GridSpec::new(axes).expect("sub-block of a valid grid is valid");
            out.extend(s.dissipation_bounds(&sub)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use proptest::prelude::*;

    fn di(u: f64, d: f64) -> Subsystem {
        Subsystem::DoubleIntegrator { u_bound: Interval::symmetric(u), d_bound: Interval::symmetric(d) }
    }

    fn rdi(u: f64, d: f64) -> Subsystem {
        Subsystem::RelativeDoubleIntegrator { u_bound: Interval::symmetric(u), d_bound: Interval::symmetric(d) }
    }

    /// max over sampled u of min over sampled d of costate . f
    fn sampled_maximin(sub: &Subsystem, state: &[f64], costate: &[f64], n: usize) -> f64 {
        let us = sub.u_bound().samples(n);
        let ds = sub.d_bound().samples(n);
        let mut f = vec![0.0; sub.state_dim()];
        us.iter()
            .map(|&u| {
                ds.iter()
                    .map(|&d| {
                        sub.flow_into(state, u, d, &mut f);
                        f.iter().zip(costate).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(di(3.0, 1.0).hamiltonian(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(di(7.0, 0.5).hamiltonian(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(di(3.0, 1.0).hamiltonian(&[4.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(di(3.0, 1.0).hamiltonian(&[0.0], &[0.0, 1.0]).is_err());

        let sub = rdi(3.0, 1.0);
        let (state, costate) = ([0.0, 1.0, 0.0], [1.0, -1.0, 2.0]);
        let closed = sub.hamiltonian(&state, &costate).unwrap();
        let sampled = sampled_maximin(&sub, &state, &costate, 401);
        assert!((closed - sampled).abs() < 1e-6, "{closed} vs {sampled}");
    }

    #[test]
    fn optimal_control_sign_rule() {
        let s = di(3.0, 1.0);
        let c = s.optimal_controls(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!((c.u, c.d), (3.0, 1.0));
        let c = s.optimal_controls(&[0.0, 0.0], &[0.0, -1.0]).unwrap();
        assert_eq!((c.u, c.d), (-3.0, -1.0));
        let c = s.optimal_controls(&[0.0, 0.0], &[5.0, 0.0]).unwrap();
        assert_eq!((c.u, c.d), (3.0, 1.0));
    }

    #[test]
    fn dissipation_examples() {
        let g = GridSpec::uniform(2, 11, -5.0, 5.0).unwrap();
        assert_eq!(di(3.0, 1.0).dissipation_bounds(&g).unwrap(), vec![5.0, 4.0]);
        assert_eq!(di(0.0, 0.0).dissipation_bounds(&g).unwrap()[1], 0.0);
        let g3 = GridSpec::uniform(3, 11, -5.0, 5.0).unwrap();
        assert_eq!(rdi(3.0, 1.0).dissipation_bounds(&g3).unwrap(), vec![5.0, 4.0, 3.0]);
        assert!(rdi(3.0, 1.0).dissipation_bounds(&g).is_err());
    }

    #[test]
    fn flow_examples() {
        assert_eq!(di(3.0, 1.0).flow(&[1.0, 2.0], 3.0, 1.0).unwrap(), vec![2.0, 2.0]);
        assert_eq!(rdi(3.0, 1.0).flow(&[0.0, 0.0, 0.0], 1.0, 0.0).unwrap(), vec![0.0, 1.0, 1.0]);
        assert!(matches!(di(3.0, 1.0).flow(&[0.0, 0.0], 3.5, 0.0), Err(DynamicsError::ControlOutOfBounds { .. })));
        assert!(matches!(di(3.0, 1.0).flow(&[0.0, 0.0], 0.0, -1.5), Err(DynamicsError::ControlOutOfBounds { .. })));
    }

    #[test]
    fn decoupled_sums_blocks() {
        let sys = DecoupledSystem::new(vec![di(3.0, 1.0), rdi(3.0, 1.0)]).unwrap();
        assert_eq!(sys.state_dim(), 5);
        assert_eq!(sys.offsets(), &[0, 2]);
        let z = [0.1, 0.2, 0.3, -0.4, 0.5];
        let q = [1.0, -2.0, 0.5, 0.25, -1.0];
        let expect = di(3.0, 1.0).hamiltonian(&z[..2], &q[..2]).unwrap()
            + rdi(3.0, 1.0).hamiltonian(&z[2..], &q[2..]).unwrap();
        assert_eq!(sys.hamiltonian(&z, &q).unwrap(), expect);
        let g = GridSpec::new(vec![
            Axis::new(7, -5.0, 5.0),
            Axis::new(7, -2.0, 6.0),
            Axis::new(7, -5.0, 5.0),
            Axis::new(7, -5.0, 5.0),
            Axis::new(7, -5.0, 5.0),
        ])
        .unwrap();
        assert_eq!(sys.dissipation_bounds(&g).unwrap(), vec![6.0, 4.0, 5.0, 4.0, 3.0]);
        assert_eq!(DecoupledSystem::new(vec![]), Err(DynamicsError::NoSubsystems));
    }

    fn arb_sub() -> impl Strategy<Value = Subsystem> {
        (0.0f64..4.0, 0.0f64..2.0, -1.0f64..1.0, proptest::bool::ANY).prop_map(|(u, d, shift, three)| {
            let u_bound = Interval::new(-u + shift, u + shift).unwrap();
            let d_bound = Interval::new(-d, d + 0.5 * shift.abs()).unwrap();
            if three {
                Subsystem::RelativeDoubleIntegrator { u_bound, d_bound }
            } else {
                Subsystem::DoubleIntegrator { u_bound, d_bound }
            }
        })
    }

    proptest! {
        #[test]
        fn positive_homogeneity(sub in arb_sub(), s in proptest::collection::vec(-5.0f64..5.0, 3),
                                q in proptest::collection::vec(-3.0f64..3.0, 3), lambda in 0.01f64..50.0) {
            let n = sub.state_dim();
            let (s, q) = (&s[..n], &q[..n]);
            let scaled: Vec<f64> = q.iter().map(|x| x * lambda).collect();
            let h = sub.hamiltonian(s, q).unwrap();
            let hs = sub.hamiltonian(s, &scaled).unwrap();
            prop_assert!((hs - lambda * h).abs() <= 1e-9 * (1.0 + hs.abs()));
            prop_assert_eq!(sub.optimal_controls(s, q).unwrap(), sub.optimal_controls(s, &scaled).unwrap());
        }

        #[test]
        fn closed_form_is_sampled_saddle(sub in arb_sub(), s in proptest::collection::vec(-5.0f64..5.0, 3),
                                         q in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let n = sub.state_dim();
            let (s, q) = (&s[..n], &q[..n]);
            let h = sub.hamiltonian(s, q).unwrap();
            let sampled = sampled_maximin(&sub, s, q, 21);
            prop_assert!(sampled <= h + 1e-12);
        }

        #[test]
        fn dissipation_bounds_partials(sub in arb_sub(), s in proptest::collection::vec(-5.0f64..5.0, 3),
                                       q in proptest::collection::vec(-3.0f64..3.0, 3), dim in 0usize..3) {
            let n = sub.state_dim();
            let dim = dim % n;
            let grid = GridSpec::uniform(n, 7, -5.0, 5.0).unwrap();
            let alpha = sub.dissipation_bounds(&grid).unwrap();
            let h = 1e-6;
            let mut qp = q[..n].to_vec();
            let mut qm = q[..n].to_vec();
            qp[dim] += h;
            qm[dim] -= h;
            let fd = (sub.hamiltonian(&s[..n], &qp).unwrap() - sub.hamiltonian(&s[..n], &qm).unwrap()) / (2.0 * h);
            prop_assert!(fd.abs() <= alpha[dim] + 1e-6);
        }
    }
}
