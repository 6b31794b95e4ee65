//! Explicit level-set integrator for terminal-value HJ PDEs.
//!
//! Spatial derivatives use fifth-order WENO on divided differences, the
//! Hamiltonian is discretized with a global Lax-Friedrichs flux, and time is
//! advanced with the three-stage TVD Runge-Kutta scheme. Solves run backward
//! from `t = 0` to `t = -T` by integrating forward in the pseudo-time
//! `s = -t`, where the PDE `V_t + H(x, ∇V) = 0` becomes `V_s = H(x, ∇V)`.
//! Snapshots are labelled with the (negative) time `t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DecoupledSystem, Dynamics, DynamicsError, Subsystem};
use crate::grid::{GridError, GridSpec, ScalarField};

/// Ghost nodes needed on each side of a line by the WENO5 stencil.
pub const GHOST_WIDTH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("line of length {0} is too short for a WENO5 stencil")]
    LineTooShort(usize),
    #[error("static field; solve is identity")]
    StaticField,
    #[error("invalid solve options: {0}")]
    BadOptions(String),
    #[error("non-finite value at node {node} (t = {time})")]
    NonFinite { time: f64, node: usize },
    #[error("subsystem solves must not freeze; use solve_full for the frozen equation")]
    FrozenSubsystem,
    #[error("solve needs {required} bytes, memory budget is {budget}")]
    MemoryBudget { required: u64, budget: u64 },
    #[error("time series is malformed: {0}")]
    BadSeries(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Solve over `t ∈ [-horizon, 0]`.
    pub horizon: f64,
    pub cfl_factor: f64,
    pub checkpoint_interval: f64,
    pub weno_epsilon: f64,
    /// Integrate `V_t + min{0, H} = 0` instead of `V_t + H = 0`.
    pub frozen: bool,
    /// Refuse solves whose estimated footprint exceeds this many bytes.
    pub memory_budget: Option<u64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            horizon: 1.5,
            cfl_factor: 0.5,
            checkpoint_interval: 0.05,
            weno_epsilon: 1e-6,
            frozen: false,
            memory_budget: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |m: String| Err(PdeError::BadOptions(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return bad(format!("cfl_factor must lie in (0, 1], got {}", self.cfl_factor));
        }
        if !(self.checkpoint_interval > 0.0 && self.checkpoint_interval <= self.horizon * (1.0 + 1e-12)) {
            return bad(format!(
                "checkpoint_interval must lie in (0, horizon], got {}",
                self.checkpoint_interval
            ));
        }
        if !(self.weno_epsilon > 0.0) {
            return bad(format!("weno_epsilon must be positive, got {}", self.weno_epsilon));
        }
        Ok(())
    }
}

/// Snapshot times `0, -c, -2c, ..., -T`. A final partial interval is kept
/// when `T` is not a multiple of `c`.
pub fn checkpoint_lattice(horizon: f64, interval: f64) -> Vec<f64> {
    let ratio = horizon / interval;
    let whole = ratio.round();
    let n = if (ratio - whole).abs() <= 1e-9 * ratio.max(1.0) { whole as usize } else { ratio.floor() as usize };
    let mut times: Vec<f64> = (0..=n).map(|k| -(k as f64) * interval).collect();
    if (ratio - whole).abs() <= 1e-9 * ratio.max(1.0) {
        *times.last_mut().unwrap() = -horizon;
    } else {
        times.push(-horizon);
    }
    if times.len() > 1 && times[0] == 0.0 {
        times[0] = 0.0;
    }
    times
}

/// Value function snapshots on one grid at strictly decreasing times
/// starting from `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesField {
    times: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl TimeSeriesField {
    pub fn new(times: Vec<f64>, fields: Vec<ScalarField>) -> Result<Self, PdeError> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(PdeError::BadSeries(format!("{} times for {} fields", times.len(), fields.len())));
        }
        if times[0] != 0.0 {
            return Err(PdeError::BadSeries(format!("first time must be 0, got {}", times[0])));
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(PdeError::BadSeries("times must be strictly decreasing".into()));
        }
        if fields.iter().any(|f| f.grid() != fields[0].grid()) {
            return Err(PdeError::BadSeries("snapshots use different grids".into()));
        }
        Ok(TimeSeriesField { times, fields })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn grid(&self) -> &GridSpec {
        self.fields[0].grid()
    }

    pub fn terminal(&self) -> &ScalarField {
        &self.fields[0]
    }

    pub fn last(&self) -> &ScalarField {
        self.fields.last().unwrap()
    }

    pub fn horizon(&self) -> f64 {
        -*self.times.last().unwrap()
    }

    /// Index of the snapshot whose time matches `t` up to `1e-9`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9)
    }

    /// Snapshot at time `t`, which must lie on the lattice.
    pub fn at(&self, t: f64) -> Option<&ScalarField> {
        self.index_of(t).map(|k| &self.fields[k])
    }
}

/// Left- and right-biased WENO5 first derivatives of a line that carries
/// three ghost values at each end. Returns one pair per interior node.
pub fn weno5_derivatives(line: &[f64], spacing: f64, epsilon: f64) -> Result<(Vec<f64>, Vec<f64>), PdeError> {
    if line.len() < 2 * GHOST_WIDTH + 1 {
        return Err(PdeError::LineTooShort(line.len()));
    }
    let inv_dx = 1.0 / spacing;
    let (left, right) = line
        .windows(2 * GHOST_WIDTH + 1)
        .map(|w| weno5_pair(w.try_into().unwrap(), inv_dx, epsilon))
        .unzip();
    Ok((left, right))
}

#[inline(always)]
fn weno5_weighted(v1: f64, v2: f64, v3: f64, v4: f64, v5: f64, eps: f64) -> f64 {
    let p1 = v1 / 3.0 - 7.0 * v2 / 6.0 + 11.0 * v3 / 6.0;
    let p2 = -v2 / 6.0 + 5.0 * v3 / 6.0 + v4 / 3.0;
    let p3 = v3 / 3.0 + 5.0 * v4 / 6.0 - v5 / 6.0;

    let s1 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3).powi(2) + 0.25 * (v1 - 4.0 * v2 + 3.0 * v3).powi(2);
    let s2 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4).powi(2) + 0.25 * (v2 - v4).powi(2);
    let s3 = 13.0 / 12.0 * (v3 - 2.0 * v4 + v5).powi(2) + 0.25 * (3.0 * v3 - 4.0 * v4 + v5).powi(2);

    let a1 = 0.1 / (s1 + eps).powi(2);
    let a2 = 0.6 / (s2 + eps).powi(2);
    let a3 = 0.3 / (s3 + eps).powi(2);
    (a1 * p1 + a2 * p2 + a3 * p3) / (a1 + a2 + a3)
}

/// WENO5 pair at the center of a seven-point stencil `phi[i-3..=i+3]`.
#[inline(always)]
fn weno5_pair(s: &[f64; 7], inv_dx: f64, eps: f64) -> (f64, f64) {
    let d0 = (s[1] - s[0]) * inv_dx;
    let d1 = (s[2] - s[1]) * inv_dx;
    let d2 = (s[3] - s[2]) * inv_dx;
    let d3 = (s[4] - s[3]) * inv_dx;
    let d4 = (s[5] - s[4]) * inv_dx;
    let d5 = (s[6] - s[5]) * inv_dx;
    let left = weno5_weighted(d0, d1, d2, d3, d4, eps);
    let right = weno5_weighted(d5, d4, d3, d2, d1, eps);
    (left, right)
}

/// Monotone Lax-Friedrichs flux `H(x, (q⁻+q⁺)/2) - Σ α_i (q⁺_i - q⁻_i)/2`
/// for an equation `φ_t + H(x, ∇φ) = 0`.
pub fn lax_friedrichs<D: Dynamics + ?Sized>(
    dynamics: &D,
    state: &[f64],
    q_minus: &[f64],
    q_plus: &[f64],
    alpha: &[f64],
) -> Result<f64, PdeError> {
    let n = dynamics.state_dim();
    for v in [state, q_minus, q_plus, alpha] {
        if v.len() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, got: v.len() }.into());
        }
    }
    let avg: Vec<f64> = q_minus.iter().zip(q_plus).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(dynamics.hamiltonian_unchecked(state, &avg) - dissipation(q_minus, q_plus, alpha))
}

#[inline(always)]
fn dissipation(q_minus: &[f64], q_plus: &[f64], alpha: &[f64]) -> f64 {
    q_minus.iter().zip(q_plus).zip(alpha).map(|((m, p), a)| a * (p - m)).sum::<f64>() * 0.5
}

/// Stable explicit step `cfl_factor / Σ α_i / Δx_i`.
pub fn cfl_timestep(alpha: &[f64], spacing: &[f64], cfl_factor: f64) -> Result<f64, PdeError> {
    if alpha.len() != spacing.len() {
        return Err(DynamicsError::DimensionMismatch { expected: spacing.len(), got: alpha.len() }.into());
    }
    if spacing.iter().any(|&dx| !(dx > 0.0)) || alpha.iter().any(|&a| !(a >= 0.0)) {
        return Err(PdeError::BadOptions("spacings must be positive and alphas non-negative".into()));
    }
    let rate: f64 = alpha.iter().zip(spacing).map(|(a, dx)| a / dx).sum();
    if rate == 0.0 {
        return Err(PdeError::StaticField);
    }
    Ok(cfl_factor / rate)
}

/// One TVD-RK3 step `φ → φ + dt (L₀ + L₁ + 4 L₂) / 6`, evaluated in
/// Shu-Osher stages. Every stage is checked for non-finite values.
pub fn rk3_step<F>(phi: &[f64], dt: f64, mut rhs: F) -> Result<Vec<f64>, PdeError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, PdeError>,
{
    let l0 = rhs(phi)?;
    let stage1: Vec<f64> = phi.iter().zip(&l0).map(|(p, l)| p + dt * l).collect();
    check_finite(&stage1)?;

    let l1 = rhs(&stage1)?;
    // φ² = ¾φ + ¼(φ¹ + dt L₁), written as an increment on φ
    let stage2: Vec<f64> =
        phi.iter().zip(l0.iter().zip(&l1)).map(|(p, (a, b))| p + 0.25 * dt * (a + b)).collect();
    check_finite(&stage2)?;

    let l2 = rhs(&stage2)?;
    // φ³ = ⅓φ + ⅔(φ² + dt L₂)
    let out: Vec<f64> = phi
        .iter()
        .zip(&stage2)
        .zip(&l2)
        .map(|((p, s), l)| p + 2.0 / 3.0 * ((s - p) + dt * l))
        .collect();
    check_finite(&out)?;
    Ok(out)
}

fn check_finite(v: &[f64]) -> Result<(), PdeError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(node) => Err(PdeError::NonFinite { time: f64::NAN, node }),
        None => Ok(()),
    }
}

/// Work counters for a completed solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    /// Number of RK3 steps taken.
    pub steps: usize,
    /// Grid nodes times steps.
    pub node_updates: u64,
}

/// Nodes processed per parallel work item.
const CHUNK: usize = 4096;

/// Spatial operator `L(φ)` of the pseudo-time equation on a fixed grid.
struct HjOperator<'a, D: ?Sized> {
    dynamics: &'a D,
    grid: &'a GridSpec,
    alpha: Vec<f64>,
    epsilon: f64,
    frozen: bool,
}

impl<D: Dynamics + ?Sized> HjOperator<'_, D> {
    /// In pseudo-time the equation reads `φ_s + G(∇φ) = 0` with `G = -H`.
    /// The rate is minus the Lax-Friedrichs flux of `G`, clipped at zero
    /// from above when freezing.
    fn rate(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; phi.len()];
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| self.rate_chunk(phi, c * CHUNK, chunk));
        out
    }

    fn rate_chunk(&self, phi: &[f64], start: usize, out: &mut [f64]) {
        let grid = self.grid;
        let nd = grid.ndim();
        let strides = grid.strides();
        let counts = grid.counts();
        let inv_dx: Vec<f64> = grid.spacing().iter().map(|d| 1.0 / d).collect();
        let mut multi = grid.multi_index(start);
        let mut state: Vec<f64> = (0..nd).map(|d| grid.coord(d, multi[d])).collect();
        let mut qm = vec![0.0; nd];
        let mut qp = vec![0.0; nd];
        let mut avg = vec![0.0; nd];
        let mut stencil = [0.0f64; 7];

        for (k, slot) in out.iter_mut().enumerate() {
            let n = start + k;
            for d in 0..nd {
                let i = multi[d];
                let cnt = counts[d];
                let st = strides[d];
                if i >= GHOST_WIDTH && i + GHOST_WIDTH < cnt {
                    let base = n - GHOST_WIDTH * st;
                    for (j, s) in stencil.iter_mut().enumerate() {
                        *s = phi[base + j * st];
                    }
                } else {
                    let line0 = n - i * st;
                    let at = |m: usize| phi[line0 + m * st];
                    for (j, s) in stencil.iter_mut().enumerate() {
                        let m = i as isize + j as isize - GHOST_WIDTH as isize;
                        *s = if m < 0 {
                            let (a0, a1) = (at(0), at(1));
                            a0 + m as f64 * (a1 - a0)
                        } else if m as usize >= cnt {
                            let (b0, b1) = (at(cnt - 1), at(cnt - 2));
                            b0 + (m as usize - (cnt - 1)) as f64 * (b0 - b1)
                        } else {
                            at(m as usize)
                        };
                    }
                }
                let (l, r) = weno5_pair(&stencil, inv_dx[d], self.epsilon);
                qm[d] = l;
                qp[d] = r;
                avg[d] = 0.5 * (l + r);
            }
            let rate = self.dynamics.hamiltonian_unchecked(&state, &avg) + dissipation(&qm, &qp, &self.alpha);
            *slot = if self.frozen { rate.min(0.0) } else { rate };

            // advance the multi-index, last dimension fastest
            for d in (0..nd).rev() {
                multi[d] += 1;
                if multi[d] < counts[d] {
                    state[d] = grid.coord(d, multi[d]);
                    break;
                }
                multi[d] = 0;
                state[d] = grid.coord(d, 0);
            }
        }
    }
}

/// Estimated peak bytes for a solve storing `ntimes` snapshots.
pub fn estimate_solve_bytes(nodes: usize, ntimes: usize) -> u64 {
    // snapshots plus the current state, three stage rates and two stage values
    (nodes as u64) * 8 * (ntimes as u64 + 6)
}

/// Integrates `V_t + H = 0` (or its frozen form) backward from the terminal
/// field for any [`Dynamics`].
pub fn solve<D: Dynamics + ?Sized>(
    dynamics: &D,
    terminal: &ScalarField,
    opts: &SolveOptions,
) -> Result<(TimeSeriesField, SolveStats), PdeError> {
    opts.validate()?;
    let grid = terminal.grid();
    if grid.ndim() != dynamics.state_dim() {
        return Err(DynamicsError::DimensionMismatch { expected: dynamics.state_dim(), got: grid.ndim() }.into());
    }
    let times = checkpoint_lattice(opts.horizon, opts.checkpoint_interval);
    if let Some(budget) = opts.memory_budget {
        let required = estimate_solve_bytes(grid.len(), times.len());
        if required > budget {
            return Err(PdeError::MemoryBudget { required, budget });
        }
    }
    let alpha = dynamics.dissipation_bounds(grid)?;
    let mut fields = Vec::with_capacity(times.len());
    fields.push(terminal.clone());

    let dt_max = match cfl_timestep(&alpha, grid.spacing(), opts.cfl_factor) {
        Ok(dt) => dt,
        Err(PdeError::StaticField) => {
            // ∂H/∂q vanishes on the whole domain, so H ≡ H(x, 0) = 0
            fields.extend(std::iter::repeat_n(terminal.clone(), times.len() - 1));
            return Ok((TimeSeriesField::new(times, fields)?, SolveStats::default()));
        }
        Err(e) => return Err(e),
    };

    let op = HjOperator { dynamics, grid, alpha, epsilon: opts.weno_epsilon, frozen: opts.frozen };
    let mut phi = terminal.data().to_vec();
    let mut stats = SolveStats::default();
    for w in times.windows(2) {
        let span = w[0] - w[1];
        let steps = (span / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        for k in 0..steps {
            phi = rk3_step(&phi, dt, |x| Ok(op.rate(x))).map_err(|e| match e {
                PdeError::NonFinite { node, .. } => PdeError::NonFinite { time: w[0] - k as f64 * dt, node },
                other => other,
            })?;
        }
        stats.steps += steps;
        fields.push(ScalarField::from_parts(grid.clone(), phi.clone()));
    }
    stats.node_updates = stats.steps as u64 * grid.len() as u64;
    Ok((TimeSeriesField::new(times, fields)?, stats))
}

/// Solves one subsystem's PDE without freezing.
pub fn solve_subsystem(sub: &Subsystem, terminal: &ScalarField, opts: &SolveOptions) -> Result<TimeSeriesField, PdeError> {
    if opts.frozen {
        return Err(PdeError::FrozenSubsystem);
    }
    Ok(solve(sub, terminal, opts)?.0)
}

/// Direct frozen solve on the product grid of a decoupled system.
pub fn solve_full(system: &DecoupledSystem, terminal: &ScalarField, opts: &SolveOptions) -> Result<TimeSeriesField, PdeError> {
    let opts = SolveOptions { frozen: true, ..*opts };
    Ok(solve(system, terminal, &opts)?.0)
}
