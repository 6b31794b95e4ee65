//! Independent ground truth and measurement.
//!
//! The oracle is a semi-Lagrangian dynamic-programming recursion over
//! sampled controls. Boundary errors are estimated as `|V| / |∇V|` at
//! reference points, and the benchmark harness fits log-log slopes to
//! measured solve times.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Dynamics, DynamicsError, Subsystem};
use crate::grid::{GridError, GridSpec, ScalarField};
use crate::pde::{checkpoint_lattice, PdeError, TimeSeriesField};

/// Floor on the gradient norm used by the distance estimate.
pub const GRADIENT_FLOOR: f64 = 0.1;

/// Fewest control samples per player accepted by the oracle.
pub const MIN_CONTROL_SAMPLES: usize = 41;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle step {dt} exceeds the limit {limit} (0.25 * spacing / max speed)")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("need at least {MIN_CONTROL_SAMPLES} control samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid oracle options: {0}")]
    BadOptions(String),
    #[error("reference point set is empty")]
    EmptyReference,
    #[error("need at least 3 strictly increasing resolutions, got {0:?}")]
    BadResolutions(Vec<usize>),
    #[error("total measured time {0:.4} s is below the 10 ms timer floor")]
    TimerTooCoarse(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub horizon: f64,
    /// Largest step allowed; each checkpoint interval is split evenly.
    pub dt: f64,
    /// Samples per player, spread uniformly over each bound.
    pub control_samples: usize,
    pub checkpoint_interval: f64,
    /// Clip every backward step at the terminal value `l`.
    pub frozen: bool,
}

/// Lookup with clamping: points outside the grid take the value at the
/// nearest boundary point plus the Euclidean exit distance.
fn clamped_lookup(field: &ScalarField, point: &[f64], scratch: &mut [f64]) -> f64 {
    let grid = field.grid();
    let mut exit = 0.0;
    for (d, (s, &x)) in scratch.iter_mut().zip(point).enumerate() {
        let ax = grid.axis(d);
        let c = x.clamp(ax.lower, ax.upper);
        exit += (x - c) * (x - c);
        *s = c;
    }
    let v = field.interpolate_unchecked(scratch);
    if exit > 0.0 {
        v + exit.sqrt()
    } else {
        v
    }
}

fn max_speed(sub: &Subsystem, grid: &GridSpec) -> Result<f64, DynamicsError> {
    Ok(sub.dissipation_bounds(grid)?.into_iter().fold(0.0, f64::max))
}

/// Backward induction on sampled controls:
/// `V(t - dt, x) = max_u min_d V(t, x + dt f(x, u, d))`, optionally clipped
/// at `l`. Snapshots are stored on the checkpoint lattice.
pub fn dp_oracle(sub: &Subsystem, terminal: &ScalarField, opts: &OracleOptions) -> Result<TimeSeriesField, OracleError> {
    let grid = terminal.grid();
    if grid.ndim() != sub.state_dim() {
        return Err(DynamicsError::DimensionMismatch { expected: sub.state_dim(), got: grid.ndim() }.into());
    }
    if opts.control_samples < MIN_CONTROL_SAMPLES {
        return Err(OracleError::TooFewSamples(opts.control_samples));
    }
    if !(opts.horizon > 0.0 && opts.dt > 0.0 && opts.checkpoint_interval > 0.0)
        || opts.checkpoint_interval > opts.horizon * (1.0 + 1e-12)
    {
        return Err(OracleError::BadOptions(format!(
            "horizon {}, dt {}, checkpoint_interval {}",
            opts.horizon, opts.dt, opts.checkpoint_interval
        )));
    }
    let speed = max_speed(sub, grid)?;
    let min_dx = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    if speed > 0.0 {
        let limit = 0.25 * min_dx / speed;
        if opts.dt > limit * (1.0 + 1e-12) {
            return Err(OracleError::StepTooLarge { dt: opts.dt, limit });
        }
    }

    let us = sub.u_bound().samples(opts.control_samples);
    let ds = sub.d_bound().samples(opts.control_samples);
    let fast = match sub {
        Subsystem::DoubleIntegrator { .. } => {
            let c = WCandidates::new(&us, &ds);
            (opts.dt * c.max_abs <= grid.spacing()[1]).then_some(c)
        }
        Subsystem::RelativeDoubleIntegrator { .. } => None,
    };

    let times = checkpoint_lattice(opts.horizon, opts.checkpoint_interval);
    let mut fields = Vec::with_capacity(times.len());
    fields.push(terminal.clone());
    let mut current = terminal.clone();
    for w in times.windows(2) {
        let span = w[0] - w[1];
        let steps = (span / opts.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        for _ in 0..steps {
            let next = match &fast {
                Some(c) => di_step(&current, c, dt),
                None => generic_step(sub, &current, &us, &ds, dt),
            };
            let data = if opts.frozen {
                next.into_iter().zip(terminal.data()).map(|(v, l)| v.min(*l)).collect()
            } else {
                next
            };
            current = ScalarField::from_parts(grid.clone(), data);
        }
        fields.push(current.clone());
    }
    Ok(TimeSeriesField::new(times, fields)?)
}

/// Reference step: every sampled control pair, full interpolation.
fn generic_step(sub: &Subsystem, v: &ScalarField, us: &[f64], ds: &[f64], dt: f64) -> Vec<f64> {
    let grid = v.grid();
    let nd = grid.ndim();
    (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; nd], vec![0.0; nd], vec![0.0; nd], vec![0.0; nd]),
            |(x, f, y, scratch), n| {
                grid.node_point_into(n, x);
                let mut best = f64::NEG_INFINITY;
                for &u in us {
                    let mut worst = f64::INFINITY;
                    for &d in ds {
                        sub.flow_into(x, u, d, f);
                        for k in 0..nd {
                            y[k] = x[k] + dt * f[k];
                        }
                        worst = worst.min(clamped_lookup(v, y, scratch));
                        if worst <= best {
                            // this u cannot beat the current best
                            break;
                        }
                    }
                    best = best.max(worst);
                }
                best
            },
        )
        .collect()
}

/// For the double integrator a step only sees `w = u - d`, and with
/// `dt |w| <= Δv` the lookup `w -> V(p + dt v, v + dt w)` is linear on each
/// side of `w = 0` (convex beyond the velocity boundary). The minimum over
/// the `d` samples for a fixed `u` is then attained at a window end or at a
/// sample next to `w = 0`, so four candidates per `u` suffice.
struct WCandidates {
    /// Up to four candidate `w` values per `u` sample.
    per_u: Vec<Vec<f64>>,
    max_abs: f64,
}

impl WCandidates {
    fn new(us: &[f64], ds: &[f64]) -> Self {
        let mut max_abs: f64 = 0.0;
        let per_u = us
            .iter()
            .map(|&u| {
                let ws: Vec<f64> = ds.iter().map(|&d| u - d).collect();
                let mut c = vec![ws[0], ws[ws.len() - 1]];
                if let Some(neg) = ws.iter().copied().filter(|&w| w < 0.0).reduce(f64::max) {
                    c.push(neg);
                }
                if let Some(pos) = ws.iter().copied().filter(|&w| w >= 0.0).reduce(f64::min) {
                    c.push(pos);
                }
                max_abs = ws.iter().fold(max_abs, |m, w| m.max(w.abs()));
                c
            })
            .collect();
        WCandidates { per_u, max_abs }
    }
}

fn di_step(v: &ScalarField, cands: &WCandidates, dt: f64) -> Vec<f64> {
    let grid = v.grid();
    let (np, nv) = (grid.axis(0).count, grid.axis(1).count);
    let (plo, phi) = (grid.axis(0).lower, grid.axis(0).upper);
    let inv_dv = 1.0 / grid.spacing()[1];
    let data = v.data();

    let mut out = vec![0.0; np * nv];
    out.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
        let p = grid.coord(0, i);
        for (j, slot) in row.iter_mut().enumerate() {
            let vel = grid.coord(1, j);
            let pn = p + dt * vel;
            let pc = pn.clamp(plo, phi);
            let dp = pn - pc;
            let (ci, th) = grid.locate(0, pc);
            let col = |jj: usize| {
                let a = data[ci * nv + jj];
                if th == 0.0 {
                    a
                } else {
                    a + th * (data[(ci + 1) * nv + jj] - a)
                }
            };
            let c = col(j);
            let up = if j + 1 < nv { Some((col(j + 1) - c) * inv_dv) } else { None };
            let down = if j > 0 { Some((c - col(j - 1)) * inv_dv) } else { None };
            let g = |w: f64| {
                let dv = dt * w;
                let slope = if w >= 0.0 { up } else { down };
                match slope {
                    Some(s) if dp == 0.0 => c + s * dv,
                    Some(s) => c + s * dv + dp.abs(),
                    None => c + (dp * dp + dv * dv).sqrt(),
                }
            };
            let mut best = f64::NEG_INFINITY;
            for ws in &cands.per_u {
                let worst = ws.iter().fold(f64::INFINITY, |m, &w| m.min(g(w)));
                best = best.max(worst);
            }
            *slot = best;
        }
    });
    out
}

/// Distance-to-boundary statistics at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub resolution: usize,
    pub grid_spacing: f64,
    pub max_error: f64,
    pub mean_error: f64,
    pub sample_count: usize,
}

impl ErrorReport {
    pub fn from_distances(resolution: usize, grid_spacing: f64, distances: &[f64]) -> Result<Self, OracleError> {
        if distances.is_empty() {
            return Err(OracleError::EmptyReference);
        }
        let max_error = distances.iter().copied().fold(0.0, f64::max);
        let mean_error = distances.iter().sum::<f64>() / distances.len() as f64;
        Ok(ErrorReport { resolution, grid_spacing, max_error, mean_error, sample_count: distances.len() })
    }
}

/// `|V(p)| / max(|∇V(p)|, 0.1)` at each point.
pub fn boundary_distances(field: &ScalarField, points: &[Vec<f64>]) -> Result<Vec<f64>, OracleError> {
    points
        .par_iter()
        .map(|p| {
            let v = field.interpolate(p)?;
            let g = field.sampled_gradient(p)?;
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(v.abs() / norm.max(GRADIENT_FLOOR))
        })
        .collect()
}

/// Distance estimates from reference boundary points to the zero level set
/// of `field`. Resolution and spacing are read from the field's first axis.
pub fn boundary_error(field: &ScalarField, reference: &[Vec<f64>]) -> Result<ErrorReport, OracleError> {
    if reference.is_empty() {
        return Err(OracleError::EmptyReference);
    }
    let d = boundary_distances(field, reference)?;
    ErrorReport::from_distances(field.grid().axis(0).count, field.grid().spacing()[0], &d)
}

/// Reports from a convergence run, plus whether both error statistics fell
/// strictly at every refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reports: Vec<ErrorReport>,
    pub strictly_decreasing: bool,
}

/// Runs `pipeline` at each resolution against whatever fixed reference it
/// closes over.
pub fn convergence_study<F>(resolutions: &[usize], mut pipeline: F) -> Result<ConvergenceStudy, OracleError>
where
    F: FnMut(usize) -> Result<ErrorReport, OracleError>,
{
    check_resolutions(resolutions)?;
    let reports = resolutions.iter().map(|&k| pipeline(k)).collect::<Result<Vec<_>, _>>()?;
    let strictly_decreasing =
        reports.windows(2).all(|w| w[1].max_error < w[0].max_error && w[1].mean_error < w[0].mean_error);
    Ok(ConvergenceStudy { reports, strictly_decreasing })
}

fn check_resolutions(resolutions: &[usize]) -> Result<(), OracleError> {
    if resolutions.len() < 3 || resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OracleError::BadResolutions(resolutions.to_vec()));
    }
    Ok(())
}

/// Work done by one timed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Work {
    pub steps: usize,
    pub node_updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub resolution: usize,
    /// Best wall-clock time over the repetitions.
    pub seconds: f64,
    pub steps: usize,
    pub node_updates: u64,
    pub repetitions: usize,
}

impl BenchRow {
    pub fn seconds_per_step(&self) -> f64 {
        self.seconds / self.steps.max(1) as f64
    }
}

/// Least-squares line through `(log k, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> SlopeFit {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    SlopeFit { slope, intercept, residual: (ss / n).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub threads: usize,
    pub full: Vec<BenchRow>,
    pub decoupled: Vec<BenchRow>,
    /// Fits of total time against resolution.
    pub full_total: SlopeFit,
    pub decoupled_total: SlopeFit,
    /// Fits of time per step against resolution.
    pub full_per_step: SlopeFit,
    pub decoupled_per_step: SlopeFit,
}

impl BenchmarkReport {
    pub fn summary(&self) -> String {
        format!("slope_full={:.3}, slope_decoupled={:.3}", self.full_total.slope, self.decoupled_total.slope)
    }
}

/// Repetitions are skipped once a single run takes longer than this.
const LONG_RUN_SECONDS: f64 = 2.0;

fn time_runs<F>(resolutions: &[usize], reps: usize, run: &mut F) -> Result<Vec<BenchRow>, OracleError>
where
    F: FnMut(usize) -> Result<Work, OracleError>,
{
    // warm-up, excluded from timing
    run(resolutions[0])?;
    let mut rows = Vec::with_capacity(resolutions.len());
    for &k in resolutions {
        let mut best = f64::INFINITY;
        let mut work = Work::default();
        let mut done = 0;
        while done < reps.max(1) {
            let start = Instant::now();
            work = run(k)?;
            let secs = start.elapsed().as_secs_f64();
            best = best.min(secs);
            done += 1;
            if secs > LONG_RUN_SECONDS {
                break;
            }
        }
        rows.push(BenchRow { resolution: k, seconds: best, steps: work.steps, node_updates: work.node_updates, repetitions: done });
    }
    let total: f64 = rows.iter().map(|r| r.seconds).sum();
    if total < 0.01 {
        return Err(OracleError::TimerTooCoarse(total));
    }
    Ok(rows)
}

fn fits(rows: &[BenchRow]) -> (SlopeFit, SlopeFit) {
    let ks: Vec<f64> = rows.iter().map(|r| r.resolution as f64).collect();
    let total: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    let per: Vec<f64> = rows.iter().map(|r| r.seconds_per_step()).collect();
    (fit_log_log(&ks, &total), fit_log_log(&ks, &per))
}

/// Times both pipelines (min over `reps` runs each) and fits slopes.
pub fn benchmark<F, G>(
    resolutions_full: &[usize],
    resolutions_decoupled: &[usize],
    reps: usize,
    mut run_full: F,
    mut run_decoupled: G,
) -> Result<BenchmarkReport, OracleError>
where
    F: FnMut(usize) -> Result<Work, OracleError>,
    G: FnMut(usize) -> Result<Work, OracleError>,
{
    check_resolutions(resolutions_full)?;
    check_resolutions(resolutions_decoupled)?;
    let full = time_runs(resolutions_full, reps, &mut run_full)?;
    let decoupled = time_runs(resolutions_decoupled, reps, &mut run_decoupled)?;
    let (full_total, full_per_step) = fits(&full);
    let (decoupled_total, decoupled_per_step) = fits(&decoupled);
    Ok(BenchmarkReport {
        threads: rayon::current_num_threads(),
        full,
        decoupled,
        full_total,
        decoupled_total,
        full_per_step,
        decoupled_per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Interval;
    use crate::grid::Axis;
    use crate::surface::extract_zero_contour_2d;
    use proptest::prelude::*;

    fn di(u: f64, d: f64) -> Subsystem {
        Subsystem::DoubleIntegrator { u_bound: Interval::symmetric(u), d_bound: Interval::symmetric(d) }
    }

    fn opts(horizon: f64, dt: f64, frozen: bool) -> OracleOptions {
        OracleOptions { horizon, dt, control_samples: 41, checkpoint_interval: 0.05, frozen }
    }

    #[test]
    fn zero_controls_keep_velocity_target() {
        // with u = d = 0 only p moves and l does not depend on p; the row
        // v = 0 is motionless, other rows can only pick up exit penalties
        let g = GridSpec::uniform(2, 21, -5.0, 5.0).unwrap();
        let l = ScalarField::from_fn(&g, |p| p[1].abs() - 1.0);
        let out = dp_oracle(&di(0.0, 0.0), &l, &opts(0.2, 0.01, false)).unwrap();
        for f in out.fields() {
            for n in 0..g.len() {
                if g.multi_index(n)[1] == 10 {
                    assert_eq!(f.data()[n], l.data()[n]);
                }
                assert!(f.data()[n] >= l.data()[n] - 1e-12);
            }
        }
    }

    #[test]
    fn precondition_errors() {
        let g = GridSpec::uniform(2, 21, -5.0, 5.0).unwrap();
        let l = ScalarField::from_fn(&g, |p| p[0].abs() - 1.0);
        // limit = 0.25 * 0.5 / 5
        let e = dp_oracle(&di(3.0, 1.0), &l, &opts(0.2, 0.03, false)).unwrap_err();
        assert!(matches!(e, OracleError::StepTooLarge { .. }));
        let mut o = opts(0.2, 0.02, false);
        o.control_samples = 11;
        assert_eq!(dp_oracle(&di(3.0, 1.0), &l, &o).unwrap_err(), OracleError::TooFewSamples(11));
    }

    #[test]
    fn frozen_oracle_never_increases() {
        let g = GridSpec::uniform(2, 31, -5.0, 5.0).unwrap();
        let l = ScalarField::from_fn(&g, |p| p[0].abs() - 1.0);
        let out = dp_oracle(&di(3.0, 1.0), &l, &opts(0.5, 0.008, true)).unwrap();
        for w in out.fields().windows(2) {
            for (later, earlier) in w[1].data().iter().zip(w[0].data()) {
                assert!(later <= earlier);
            }
        }
    }

    #[test]
    fn fast_path_matches_generic() {
        for (u, d, nu) in [(3.0, 1.0, 41), (1.7, 1.0, 43), (0.5, 2.0, 41)] {
            let sub = di(u, d);
            let g = GridSpec::new(vec![Axis::new(25, -5.0, 5.0), Axis::new(21, -5.0, 5.0)]).unwrap();
            let l = ScalarField::from_fn(&g, |p| (p[0] - 0.3).abs() - 1.0 + 0.05 * p[1] * p[1] - 0.3 * (p[0] * p[1]).sin());
            let us = sub.u_bound().samples(nu);
            let ds = sub.d_bound().samples(41);
            let c = WCandidates::new(&us, &ds);
            let mut v = l.clone();
            for _ in 0..5 {
                let a = di_step(&v, &c, 0.02);
                let b = generic_step(&sub, &v, &us, &ds, 0.02);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
                v = ScalarField::from_parts(g.clone(), a);
            }
        }
    }

    #[test]
    fn exit_distance_outside_grid() {
        let g = GridSpec::uniform(2, 11, 0.0, 1.0).unwrap();
        let f = ScalarField::from_fn(&g, |p| p[0]);
        let mut s = [0.0; 2];
        assert!((clamped_lookup(&f, &[1.3, 0.5], &mut s) - 1.3).abs() < 1e-12);
        assert!((clamped_lookup(&f, &[1.3, 1.4], &mut s) - 1.5).abs() < 1e-12);
        assert_eq!(clamped_lookup(&f, &[0.5, 0.5], &mut s), 0.5);
    }

    #[test]
    fn boundary_error_examples() {
        let g = GridSpec::uniform(2, 21, -2.0, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |p| p[0] - 0.3);
        let r = boundary_error(&f, &[vec![0.3 + 0.17, 0.0], vec![0.3 - 0.05, 1.0]]).unwrap();
        assert!((r.max_error - 0.17).abs() < 1e-12);
        assert!((r.mean_error - 0.11).abs() < 1e-12);
        assert_eq!(r.sample_count, 2);
        assert_eq!(boundary_error(&f, &[]).unwrap_err(), OracleError::EmptyReference);

        // contour vertices of a multilinear field lie on its zero set
        let c = ScalarField::from_fn(&g, |p| p[0] * p[0] + p[1] * p[1] - 1.0);
        let pts: Vec<Vec<f64>> =
            extract_zero_contour_2d(&c).unwrap().into_iter().flatten().map(|q| q.to_vec()).collect();
        assert!(!pts.is_empty());
        assert!(boundary_error(&c, &pts).unwrap().max_error < 1e-9);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let ks = [10.0, 20.0, 40.0, 80.0];
        let ys: Vec<f64> = ks.iter().map(|k: &f64| 3.0 * k.powf(2.5)).collect();
        let fit = fit_log_log(&ks, &ys);
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn convergence_harness() {
        assert!(matches!(convergence_study(&[5, 5, 9], |_| unreachable!()), Err(OracleError::BadResolutions(_))));
        let s = convergence_study(&[10, 20, 40], |k| ErrorReport::from_distances(k, 1.0 / k as f64, &[1.0 / k as f64, 0.5 / k as f64]))
            .unwrap();
        assert!(s.strictly_decreasing);
        let s = convergence_study(&[10, 20, 40], |k| ErrorReport::from_distances(k, 1.0, &[1.0])).unwrap();
        assert!(!s.strictly_decreasing);
    }

    #[test]
    fn benchmark_counts_work() {
        let spin = |k: usize| {
            let mut acc = 0.0f64;
            for i in 0..k * 400_000 {
                acc += (i as f64).sqrt();
            }
            std::hint::black_box(acc);
            Ok(Work { steps: k, node_updates: (k * k) as u64 })
        };
        let r = benchmark(&[20, 40, 80], &[20, 40, 80], 1, spin, spin).unwrap();
        assert_eq!(r.full.len(), 3);
        assert_eq!(r.decoupled[2].node_updates, 6400);
        assert!(r.full_total.slope > 0.5);
    }

    proptest! {
        #[test]
        fn boundary_error_scale_invariant(x in -1.5f64..1.5, y in -1.5f64..1.5, s in 0.5f64..20.0) {
            let g = GridSpec::uniform(2, 41, -2.0, 2.0).unwrap();
            let f = ScalarField::from_fn(&g, |p| p[0] * p[0] + 0.5 * p[1] * p[1] - 1.0);
            let scaled = ScalarField::from_fn(&g, |p| s * (p[0] * p[0] + 0.5 * p[1] * p[1] - 1.0));
            let grad = f.sampled_gradient(&[x, y]).unwrap();
            prop_assume!(grad.iter().map(|v| v * v).sum::<f64>().sqrt() > GRADIENT_FLOOR);
            let a = boundary_error(&f, &[vec![x, y]]).unwrap().max_error;
            let b = boundary_error(&scaled, &[vec![x, y]]).unwrap().max_error;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
