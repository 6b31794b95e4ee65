//! A complete reachability problem: subsystems, their grids, the target, and
//! solver options. Also builds the shipped four- and six-dimensional
//! pursuit-evasion examples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decouple::{reconstruct_domain, DecoupleError, QueryDomain, ReconstructionHandle, ValueFunction};
use crate::dynamics::{DecoupledSystem, DynamicsError, Interval, Subsystem};
use crate::grid::{Axis, GridError, GridSpec, ScalarField};
use crate::pde::{self, PdeError, SolveOptions, SolveStats, TimeSeriesField};
use crate::surface::{combine_min, CombineMode, Constraint, SubsystemSurface, SurfaceError, TargetSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Decouple(#[from] DecoupleError),
}

/// The full target is the union of `targets`; each term combines its
/// surfaces by its own mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub subsystems: Vec<Subsystem>,
    /// One grid per subsystem.
    pub grids: Vec<Vec<Axis>>,
    pub targets: Vec<TargetSpec>,
    pub solve: SolveOptions,
}

/// One subsystem solve: surface `surface` of target term `term`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveJob {
    pub term: usize,
    pub surface: usize,
    pub subsystem: usize,
}

impl Problem {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let system = self.system()?;
        if self.grids.len() != self.subsystems.len() {
            return Err(ProblemError::Invalid(format!(
                "{} grids for {} subsystems",
                self.grids.len(),
                self.subsystems.len()
            )));
        }
        for (i, sub) in self.subsystems.iter().enumerate() {
            let g = self.grid(i)?;
            if g.ndim() != system.dims()[i] {
                return Err(ProblemError::Invalid(format!(
                    "grid {i} has {} axes, subsystem needs {}",
                    g.ndim(),
                    system.dims()[i]
                )));
            }
            if sub.u_bound().lo > sub.u_bound().hi || sub.d_bound().lo > sub.d_bound().hi {
                return Err(ProblemError::Invalid(format!("subsystem {i} has an empty control bound")));
            }
        }
        if self.targets.is_empty() {
            return Err(ProblemError::Invalid("no target terms".into()));
        }
        for (t, term) in self.targets.iter().enumerate() {
            term.validate(&system.dims())?;
            if term.mode == CombineMode::Intersection {
                let mut seen = vec![false; self.subsystems.len()];
                for s in &term.surfaces {
                    if std::mem::replace(&mut seen[s.subsystem], true) {
                        return Err(ProblemError::Invalid(format!(
                            "target term {t} lists subsystem {} twice; merge its constraints into one surface",
                            s.subsystem
                        )));
                    }
                }
            }
        }
        self.solve.validate()?;
        Ok(())
    }

    pub fn system(&self) -> Result<DecoupledSystem, ProblemError> {
        Ok(DecoupledSystem::new(self.subsystems.clone())?)
    }

    pub fn grid(&self, i: usize) -> Result<GridSpec, ProblemError> {
        let axes = self.grids.get(i).ok_or_else(|| ProblemError::Invalid(format!("no grid for subsystem {i}")))?;
        Ok(GridSpec::new(axes.clone())?)
    }

    /// Product of the subsystem grids, in state order.
    pub fn full_grid(&self) -> Result<GridSpec, ProblemError> {
        Ok(GridSpec::new(self.grids.iter().flatten().copied().collect())?)
    }

    pub fn full_dim(&self) -> usize {
        self.grids.iter().map(Vec::len).sum()
    }

    /// Smallest node spacing over all subsystem grids.
    pub fn min_spacing(&self) -> Result<f64, ProblemError> {
        let mut m = f64::INFINITY;
        for i in 0..self.grids.len() {
            m = self.grid(i)?.spacing().iter().copied().fold(m, f64::min);
        }
        Ok(m)
    }

    /// Largest node spacing over all subsystem grids.
    pub fn max_spacing(&self) -> Result<f64, ProblemError> {
        let mut m: f64 = 0.0;
        for i in 0..self.grids.len() {
            m = self.grid(i)?.spacing().iter().copied().fold(m, f64::max);
        }
        Ok(m)
    }

    /// The same problem with every grid axis resampled to `nodes` nodes.
    pub fn with_nodes(&self, nodes: usize) -> Problem {
        let mut p = self.clone();
        p.grids.iter_mut().flatten().for_each(|a| a.count = nodes);
        p
    }

    pub fn jobs(&self) -> Vec<SolveJob> {
        let mut jobs = Vec::new();
        for (term, t) in self.targets.iter().enumerate() {
            for (surface, s) in t.surfaces.iter().enumerate() {
                jobs.push(SolveJob { term, surface, subsystem: s.subsystem });
            }
        }
        jobs
    }

    pub fn terminal(&self, job: SolveJob) -> Result<ScalarField, ProblemError> {
        let surface = &self.targets[job.term].surfaces[job.surface];
        Ok(surface.sample(&self.grid(job.subsystem)?))
    }

    /// Surfaces of an intersection term get the unfrozen subsystem solve
    /// that reconstruction expects. A union surface is its own target, so it
    /// gets the frozen solve on its subsystem directly.
    pub fn solve_job(&self, job: SolveJob) -> Result<(TimeSeriesField, SolveStats), ProblemError> {
        let frozen = self.targets[job.term].mode == CombineMode::Union;
        let opts = SolveOptions { frozen, ..self.solve };
        Ok(pde::solve(&self.subsystems[job.subsystem], &self.terminal(job)?, &opts)?)
    }

    /// All subsystem solves, in job order.
    pub fn solve_all(&self) -> Result<Vec<TimeSeriesField>, ProblemError> {
        self.validate()?;
        self.jobs().into_iter().map(|j| self.solve_job(j).map(|r| r.0)).collect()
    }

    /// Groups solutions (in job order) into reconstruction handles: one per
    /// intersection term, one per surface of a union term.
    pub fn assemble(&self, solutions: Vec<TimeSeriesField>) -> Result<Reconstruction, ProblemError> {
        let jobs = self.jobs();
        if solutions.len() != jobs.len() {
            return Err(ProblemError::Invalid(format!("{} solutions for {} jobs", solutions.len(), jobs.len())));
        }
        let system = self.system()?;
        let full_dim = self.full_dim();
        let mut handles = Vec::new();
        let mut it = jobs.into_iter().zip(solutions);
        for term in &self.targets {
            let group: Vec<(SolveJob, TimeSeriesField)> = it.by_ref().take(term.surfaces.len()).collect();
            for (job, sol) in &group {
                if sol.grid() != &self.grid(job.subsystem)? {
                    return Err(ProblemError::Invalid(format!(
                        "solution for subsystem {} is on the wrong grid",
                        job.subsystem
                    )));
                }
            }
            match term.mode {
                CombineMode::Intersection => {
                    let offsets = group.iter().map(|(j, _)| system.offsets()[j.subsystem]).collect();
                    let sols = group.into_iter().map(|(_, s)| s).collect();
                    handles.push(ReconstructionHandle::new(sols, offsets, full_dim)?);
                }
                CombineMode::Union => {
                    for (j, s) in group {
                        handles.push(ReconstructionHandle::new(vec![s], vec![system.offsets()[j.subsystem]], full_dim)?);
                    }
                }
            }
        }
        Reconstruction::new(handles)
    }

    /// `l(z)` on a grid over the full state.
    pub fn full_terminal(&self, grid: &GridSpec) -> Result<ScalarField, ProblemError> {
        let system = self.system()?;
        if grid.ndim() != system.offsets().last().unwrap() + system.dims().last().unwrap() {
            return Err(ProblemError::Invalid("full grid has the wrong dimension".into()));
        }
        Ok(ScalarField::from_fn(grid, |z| {
            let blocks: Vec<&[f64]> = (0..system.subsystems().len()).map(|i| system.block(z, i)).collect();
            self.targets.iter().map(|t| t.eval(&blocks)).fold(f64::INFINITY, f64::min)
        }))
    }

    /// Direct frozen solve on the product of the subsystem grids.
    pub fn solve_full(&self, memory_budget: Option<u64>) -> Result<(TimeSeriesField, SolveStats), ProblemError> {
        self.validate()?;
        let grid = self.full_grid()?;
        let opts = SolveOptions { frozen: true, memory_budget, ..self.solve };
        let times = pde::checkpoint_lattice(opts.horizon, opts.checkpoint_interval).len();
        if let Some(budget) = memory_budget {
            // refuse before sampling the terminal field on a huge grid
            let required = pde::estimate_solve_bytes(grid.len(), times);
            if required > budget {
                return Err(PdeError::MemoryBudget { required, budget }.into());
            }
        }
        let l = self.full_terminal(&grid)?;
        Ok(pde::solve(&self.system()?, &l, &opts)?)
    }

    /// Two planar double integrators with a box collision target
    /// `|p_x| <= 1, |p_y| <= 1` on `[-5, 5]` per axis.
    pub fn quad4d(nodes: usize) -> Problem {
        let di = Subsystem::DoubleIntegrator { u_bound: Interval::symmetric(3.0), d_bound: Interval::symmetric(1.0) };
        let axes = vec![Axis::new(nodes, -5.0, 5.0); 2];
        let slab = |i| SubsystemSurface { subsystem: i, constraints: vec![Constraint::Slab { dim: 0, lower: -1.0, upper: 1.0 }] };
        Problem {
            subsystems: vec![di, di],
            grids: vec![axes.clone(), axes],
            targets: vec![TargetSpec { surfaces: vec![slab(0), slab(1)], mode: CombineMode::Intersection }],
            solve: SolveOptions { horizon: 1.5, checkpoint_interval: 0.05, ..SolveOptions::default() },
        }
    }

    /// Two relative double integrators augmented with the evader velocity.
    /// The target is the union of the collision box `|p_x|, |p_y| <= 2` and
    /// the velocity limit `|v_x1| >= 5` or `|v_y1| >= 5`.
    pub fn quad6d(nodes: usize) -> Problem {
        let di = Subsystem::RelativeDoubleIntegrator { u_bound: Interval::symmetric(3.0), d_bound: Interval::symmetric(1.0) };
        let axes = vec![Axis::new(nodes, -10.0, 10.0), Axis::new(nodes, -8.0, 8.0), Axis::new(nodes, -6.0, 6.0)];
        let slab = |i| SubsystemSurface { subsystem: i, constraints: vec![Constraint::Slab { dim: 0, lower: -2.0, upper: 2.0 }] };
        let limit = |i| SubsystemSurface { subsystem: i, constraints: vec![Constraint::Outside { dim: 2, threshold: 5.0 }] };
        Problem {
            subsystems: vec![di, di],
            grids: vec![axes.clone(), axes],
            targets: vec![
                TargetSpec { surfaces: vec![slab(0), slab(1)], mode: CombineMode::Intersection },
                TargetSpec { surfaces: vec![limit(0), limit(1)], mode: CombineMode::Union },
            ],
            solve: SolveOptions { horizon: 2.0, checkpoint_interval: 0.05, ..SolveOptions::default() },
        }
    }
}

/// The value function of a problem: the minimum over its handles.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    handles: Vec<ReconstructionHandle>,
}

impl Reconstruction {
    pub fn new(handles: Vec<ReconstructionHandle>) -> Result<Self, ProblemError> {
        let first = handles.first().ok_or(DecoupleError::Empty)?;
        if handles.iter().any(|h| h.times().len() != first.times().len() || h.full_dim() != first.full_dim()) {
            return Err(DecoupleError::LatticeMismatch.into());
        }
        Ok(Reconstruction { handles })
    }

    pub fn handles(&self) -> &[ReconstructionHandle] {
        &self.handles
    }

    /// Reconstruction on a query domain, combined over handles by pointwise
    /// minimum.
    pub fn reconstruct_domain(&self, query: &QueryDomain, upto_time: f64) -> Result<TimeSeriesField, ProblemError> {
        let parts =
            self.handles.iter().map(|h| reconstruct_domain(h, query, upto_time)).collect::<Result<Vec<_>, _>>()?;
        if parts.len() == 1 {
            return Ok(parts.into_iter().next().unwrap());
        }
        let times = parts[0].times().to_vec();
        let fields = (0..times.len())
            .map(|k| combine_min(&parts.iter().map(|p| p.fields()[k].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TimeSeriesField::new(times, fields)?)
    }
}

impl ValueFunction for Reconstruction {
    fn full_dim(&self) -> usize {
        self.handles[0].full_dim()
    }

    fn times(&self) -> &[f64] {
        self.handles[0].times()
    }

    fn value(&self, z: &[f64], t: f64) -> Result<f64, DecoupleError> {
        let mut best = f64::INFINITY;
        for h in &self.handles {
            best = best.min(h.value(z, t)?);
        }
        Ok(best)
    }

    /// Gradient of the lowest-index minimizing handle.
    fn value_and_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        let mut best = (f64::INFINITY, 0);
        for (i, h) in self.handles.iter().enumerate() {
            let v = h.value(z, t)?;
            if v < best.0 {
                best = (v, i);
            }
        }
        self.handles[best.1].value_and_gradient(z, t)
    }

    /// Handles are visited from the lowest value up; each subsystem block
    /// comes from the first handle that covers it.
    fn control_gradient(&self, z: &[f64], t: f64) -> Result<(f64, Vec<f64>), DecoupleError> {
        let mut order = Vec::with_capacity(self.handles.len());
        for (i, h) in self.handles.iter().enumerate() {
            order.push((h.value(z, t)?, i));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut grad = vec![0.0; self.full_dim()];
        let mut claimed = vec![false; self.full_dim()];
        for (rank, &(_, i)) in order.iter().enumerate() {
            let h = &self.handles[i];
            if h.blocks().all(|(o, n)| claimed[o..o + n].iter().all(|&c| c)) {
                continue;
            }
            let g = match h.control_gradient(z, t) {
                Ok((_, g)) => g,
                Err(e) if rank == 0 => return Err(e),
                Err(_) => continue,
            };
            for (o, n) in h.blocks() {
                if !claimed[o..o + n].iter().any(|&c| c) {
                    grad[o..o + n].copy_from_slice(&g[o..o + n]);
                    claimed[o..o + n].iter_mut().for_each(|c| *c = true);
                }
            }
        }
        Ok((order[0].0, grad))
    }
}
