use std::path::{Path, PathBuf};
use std::time::Instant;

use hjreach::control::{simulate, RunStatus};
use hjreach::io::{load_snapshot, save_snapshot};
use hjreach::oracle::{
    benchmark, boundary_distances, convergence_study, dp_oracle, ErrorReport, OracleError, OracleOptions, Work,
};
use hjreach::pde::{checkpoint_lattice, estimate_solve_bytes};
use hjreach::problem::{Problem, Reconstruction, SolveJob};
use hjreach::surface::extract_zero_contour_2d;
use hjreach::{CombineMode, Dynamics, QueryAxis, QueryDomain, TimeSeriesField};

use crate::config::{RunConfig, Slice};
use crate::csv::{num, CsvWriter};
use crate::error::CliError;

/// Everything a command needs besides the config itself.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub inputs: PathBuf,
    pub memory_budget: Option<u64>,
    pub seed: Option<u64>,
}

impl Context {
    fn csv(&self, name: &str, header: &[&str]) -> Result<CsvWriter, CliError> {
        CsvWriter::create(&self.out.join(name), &self.hash, self.seed, header)
    }

    fn check_budget(&self, nodes: usize, what: &str) -> Result<(), CliError> {
        let times = checkpoint_lattice(self.cfg.solve.horizon, self.cfg.solve.checkpoint_interval).len();
        let required = estimate_solve_bytes(nodes, times);
        match self.memory_budget {
            Some(budget) if required > budget => Err(CliError::Resource(format!(
                "{what} needs about {required} bytes ({nodes} nodes x {times} snapshots), budget is {budget}"
            ))),
            _ => Ok(()),
        }
    }
}

pub fn job_file(job: SolveJob) -> String {
    format!("sub{}_term{}_surface{}.hjrs", job.subsystem, job.term, job.surface)
}

fn save(path: &Path, series: &TimeSeriesField) -> Result<(), CliError> {
    save_snapshot(path, series)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn solve(ctx: &Context) -> Result<(), CliError> {
    let p = ctx.cfg.problem();
    for job in p.jobs() {
        ctx.check_budget(p.grid(job.subsystem)?.len(), &format!("subsystem {} solve", job.subsystem))?;
    }
    for job in p.jobs() {
        let (series, stats) = p.solve_job(job)?;
        println!("subsystem {} (term {}, surface {}): {} steps", job.subsystem, job.term, job.surface, stats.steps);
        save(&ctx.out.join(job_file(job)), &series)?;
    }
    Ok(())
}

pub fn solve_full(ctx: &Context) -> Result<(), CliError> {
    let p = ctx.cfg.problem();
    ctx.check_budget(p.full_grid()?.len(), "full solve")?;
    let (series, stats) = p.solve_full(ctx.memory_budget)?;
    println!("full solve: {} steps, {} node updates", stats.steps, stats.node_updates);
    save(&ctx.out.join("full.hjrs"), &series)
}

/// Loads the subsystem snapshots written by `solve` and checks them against
/// the config.
fn load_reconstruction(ctx: &Context) -> Result<Reconstruction, CliError> {
    let p = ctx.cfg.problem();
    let mut sols = Vec::new();
    for job in p.jobs() {
        let path = ctx.inputs.join(job_file(job));
        if !path.exists() {
            return Err(CliError::Config(format!("missing {}; run `solve` first", path.display())));
        }
        let s = load_snapshot(&path)?;
        if s.grid() != &p.grid(job.subsystem)? {
            return Err(CliError::Config(format!("{} does not match grids[{}]", path.display(), job.subsystem)));
        }
        sols.push(s);
    }
    Ok(p.assemble(sols)?)
}

fn slices(ctx: &Context) -> Result<Vec<Slice>, CliError> {
    if !ctx.cfg.query.is_empty() {
        return Ok(ctx.cfg.query.clone());
    }
    let grid = ctx.cfg.problem().full_grid()?;
    Ok(vec![Slice { name: "full".into(), axes: QueryDomain::full(&grid).axes, time: None }])
}

fn slice_file(name: &str) -> String {
    format!("slice_{name}.hjrs")
}

pub fn reconstruct(ctx: &Context) -> Result<(), CliError> {
    let rec = load_reconstruction(ctx)?;
    for s in slices(ctx)? {
        let query = QueryDomain { axes: s.axes.clone() };
        let nodes = query.output_grid()?.map(|g| g.len()).unwrap_or(1);
        ctx.check_budget(nodes, &format!("slice {}", s.name))?;
        let series = rec.reconstruct_domain(&query, s.time.unwrap_or(-ctx.cfg.solve.horizon))?;
        save(&ctx.out.join(slice_file(&s.name)), &series)?;
    }
    Ok(())
}

pub fn contour(ctx: &Context) -> Result<(), CliError> {
    for s in slices(ctx)? {
        let path = ctx.inputs.join(slice_file(&s.name));
        if !path.exists() {
            return Err(CliError::Config(format!("missing {}; run `reconstruct` first", path.display())));
        }
        let series = load_snapshot(&path)?;
        if series.grid().ndim() != 2 {
            println!("skipping slice {}: {} range axes, contours need 2", s.name, series.grid().ndim());
            continue;
        }
        let lines = extract_zero_contour_2d(series.last()).map_err(|e| CliError::Config(e.to_string()))?;
        let name = format!("contour_{}.csv", s.name);
        let mut w = ctx.csv(&name, &["polyline", "point", "x", "y"])?;
        let mut count = 0;
        for (i, line) in lines.iter().enumerate() {
            for (j, q) in line.iter().enumerate() {
                w.row(&[i.to_string(), j.to_string(), num(q[0]), num(q[1])])?;
                count += 1;
            }
        }
        w.finish()?;
        println!("wrote {} ({} polylines, {count} points)", ctx.out.join(name).display(), lines.len());
    }
    Ok(())
}

fn resample(axes: &[QueryAxis], nodes: usize) -> QueryDomain {
    let axes = axes
        .iter()
        .map(|a| match *a {
            QueryAxis::Range(mut r) => {
                r.count = nodes;
                QueryAxis::Range(r)
            }
            fixed => fixed,
        })
        .collect();
    QueryDomain { axes }
}

fn oracle_reconstruction(p: &Problem, samples: usize) -> Result<Reconstruction, CliError> {
    let mut sols = Vec::new();
    for job in p.jobs() {
        let sub = &p.subsystems[job.subsystem];
        let grid = p.grid(job.subsystem)?;
        let speed = sub.dissipation_bounds(&grid).map_err(|e| CliError::Config(e.to_string()))?.into_iter().fold(0.0, f64::max);
        let min_dx = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
        let dt = if speed > 0.0 { 0.25 * min_dx / speed } else { p.solve.checkpoint_interval };
        let opts = OracleOptions {
            horizon: p.solve.horizon,
            dt,
            control_samples: samples,
            checkpoint_interval: p.solve.checkpoint_interval,
            frozen: p.targets[job.term].mode == CombineMode::Union,
        };
        sols.push(dp_oracle(sub, &p.terminal(job)?, &opts)?);
    }
    Ok(p.assemble(sols)?)
}

pub fn error(ctx: &Context) -> Result<(), CliError> {
    let study = ctx.cfg.error.as_ref().ok_or_else(|| CliError::Config("error: block missing from config".into()))?;
    let base = ctx.cfg.problem();
    let t = -base.solve.horizon;
    let start = Instant::now();
    let reference = oracle_reconstruction(&base.with_nodes(study.reference_nodes), study.control_samples)?;
    let mut points = Vec::new();
    for axes in &study.slices {
        let q = resample(axes, study.reference_nodes);
        let field = reference.reconstruct_domain(&q, t)?;
        let ranges: Vec<_> = q.axes.iter().filter_map(|a| if let QueryAxis::Range(r) = a { Some(*r) } else { None }).collect();
        let keep = |x: &[f64; 2]| {
            x.iter().zip(&ranges).all(|(&c, r)| c >= r.lower + study.margin && c <= r.upper - study.margin)
        };
        let lines = extract_zero_contour_2d(field.last()).map_err(|e| CliError::Config(e.to_string()))?;
        points.push(lines.into_iter().flatten().filter(keep).map(|x| x.to_vec()).collect::<Vec<_>>());
    }
    let total: usize = points.iter().map(Vec::len).sum();
    println!("reference: {total} boundary points from {} slices in {:.1}s", points.len(), start.elapsed().as_secs_f64());

    let result = convergence_study(&study.resolutions, |k| {
        let p = base.with_nodes(k);
        let wrap = |e: CliError| OracleError::BadOptions(e.to_string());
        let rec = p.solve_all().and_then(|s| p.assemble(s)).map_err(|e| wrap(e.into()))?;
        let mut d = Vec::with_capacity(total);
        for (axes, pts) in study.slices.iter().zip(&points) {
            let field = rec.reconstruct_domain(&resample(axes, k), t).map_err(|e| wrap(e.into()))?;
            d.extend(boundary_distances(field.last(), pts)?);
        }
        let spacing = p.max_spacing().map_err(|e| wrap(e.into()))?;
        ErrorReport::from_distances(k, spacing, &d)
    })?;
    let mut w = ctx.csv("error.csv", &["resolution", "spacing", "max_error", "mean_error"])?;
    for r in &result.reports {
        w.row(&[r.resolution.to_string(), num(r.grid_spacing), num(r.max_error), num(r.mean_error)])?;
        println!(
            "k={} spacing={:.4} max={:.4} ({:.2} spacings) mean={:.4}",
            r.resolution,
            r.grid_spacing,
            r.max_error,
            r.max_error / r.grid_spacing,
            r.mean_error
        );
    }
    w.finish()?;
    println!("strictly decreasing: {}", result.strictly_decreasing);
    Ok(())
}

pub fn bench(ctx: &Context) -> Result<(), CliError> {
    let plan = ctx.cfg.bench.as_ref().ok_or_else(|| CliError::Config("bench: block missing from config".into()))?;
    let base = ctx.cfg.problem();
    base.validate()?;
    if let Some(&k) = plan.full.iter().max() {
        ctx.check_budget(base.with_nodes(k).full_grid()?.len(), &format!("full solve at {k} nodes"))?;
    }
    let wrap = |e: hjreach::problem::ProblemError| OracleError::BadOptions(e.to_string());
    let run_full = |k: usize| {
        let (_, s) = base.with_nodes(k).solve_full(None).map_err(wrap)?;
        Ok(Work { steps: s.steps, node_updates: s.node_updates })
    };
    let run_decoupled = |k: usize| {
        let p = base.with_nodes(k);
        let mut work = Work::default();
        for job in p.jobs() {
            let (_, s) = p.solve_job(job).map_err(wrap)?;
            work.steps += s.steps;
            work.node_updates += s.node_updates;
        }
        Ok(work)
    };
    let report = benchmark(&plan.full, &plan.decoupled, plan.repetitions, run_full, run_decoupled)?;
    let mut w = ctx.csv("bench.csv", &["pipeline", "resolution", "seconds", "steps", "node_updates", "repetitions", "threads"])?;
    for (name, rows) in [("full", &report.full), ("decoupled", &report.decoupled)] {
        for r in rows {
            w.row(&[
                name.to_string(),
                r.resolution.to_string(),
                num(r.seconds),
                r.steps.to_string(),
                r.node_updates.to_string(),
                r.repetitions.to_string(),
                report.threads.to_string(),
            ])?;
        }
    }
    w.finish()?;
    println!("{}", report.summary());
    Ok(())
}

pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    let sim = ctx.cfg.simulation.as_ref().ok_or_else(|| CliError::Config("simulation: block missing from config".into()))?;
    let rec = load_reconstruction(ctx)?;
    let system = ctx.cfg.problem().system()?;
    let tr = simulate(sim, &system, &rec)?;

    let n = system.subsystems().len();
    let zdim = system.state_dim();
    let mut header: Vec<String> = vec!["t".into()];
    for i in 0..n {
        header.extend([format!("evader_p{i}"), format!("evader_v{i}"), format!("pursuer_p{i}"), format!("pursuer_v{i}")]);
    }
    header.extend((0..zdim).map(|j| format!("z{j}")));
    header.push("value".into());
    header.extend((0..n).map(|i| format!("u{i}")));
    header.extend((0..n).map(|i| format!("d{i}")));
    header.push("filter_active".into());
    let cols: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = ctx.csv("trajectory.csv", &cols)?;
    for r in &tr.records {
        let mut row = vec![num(r.t)];
        for (e, q) in r.evader.iter().zip(&r.pursuer) {
            row.extend([num(e.p), num(e.v), num(q.p), num(q.v)]);
        }
        row.extend(r.z.iter().map(|&x| num(x)));
        row.push(num(r.value));
        row.extend(r.u.iter().map(|&x| num(x)));
        row.extend(r.d.iter().map(|&x| num(x)));
        row.push(u8::from(r.filter_active).to_string());
        w.row(&row)?;
    }
    w.finish()?;
    let active = tr.records.iter().filter(|r| r.filter_active).count();
    let status = match tr.status {
        RunStatus::Completed => "completed",
        RunStatus::LeftDomain => "left the value function domain",
    };
    println!("{} steps, {status}, filter active on {active}", tr.records.len());
    if tr.unsafe_start {
        println!("warning: unsafe start (value {:.4} <= 0)", tr.records[0].value);
    }
    Ok(())
}
