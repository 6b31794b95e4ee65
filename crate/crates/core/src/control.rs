//! Optimal control synthesis from a value function and closed-loop
//! simulation of two vehicles with a least-restrictive safety filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decouple::{snap_time, DecoupleError, ValueFunction};
use crate::dynamics::{DecoupledSystem, Dynamics, Subsystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("expected {expected} values for {what}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Decouple(#[from] DecoupleError),
}

/// Per-subsystem saddle controls. `degenerate[i]` is set when the gradient
/// block of subsystem `i` vanished and the tie-break picked upper bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub value: f64,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn synthesize_controls(
    system: &DecoupledSystem,
    vf: &dyn ValueFunction,
    z: &[f64],
    t: f64,
) -> Result<Synthesis, ControlError> {
    check_len("state", system.state_dim(), z.len())?;
    let (value, grad) = vf.value_and_gradient(z, t)?;
    Ok(synthesis_from(system, value, &grad))
}

fn synthesis_from(system: &DecoupledSystem, value: f64, grad: &[f64]) -> Synthesis {
    let n = system.subsystems().len();
    let mut out = Synthesis { value, u: Vec::with_capacity(n), d: Vec::with_capacity(n), degenerate: Vec::with_capacity(n) };
    for (i, sub) in system.subsystems().iter().enumerate() {
        let q = system.block(grad, i);
        let c = sub.optimal_controls_unchecked(q);
        out.u.push(c.u);
        out.d.push(c.d);
        out.degenerate.push(q.iter().all(|&x| x == 0.0));
    }
    out
}

/// Like `synthesize_controls` but on `ValueFunction::control_gradient`, so
/// subsystems that do not attain the maximum still get their own saddle
/// controls.
pub fn control_synthesis(
    system: &DecoupledSystem,
    vf: &dyn ValueFunction,
    z: &[f64],
    t: f64,
) -> Result<Synthesis, ControlError> {
    check_len("state", system.state_dim(), z.len())?;
    let (value, grad) = vf.control_gradient(z, t)?;
    Ok(synthesis_from(system, value, &grad))
}

/// Output of the safety filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub value: f64,
    pub u: Vec<f64>,
    pub active: bool,
    /// The synthesis used when the filter was active.
    pub synthesis: Option<Synthesis>,
}

/// Passes the clamped nominal control through while the value is above
/// `threshold`; otherwise applies the `control_synthesis` saddle control on
/// every subsystem whose gradient block is non-zero and keeps the clamped
/// nominal on the rest.
pub fn safety_filter(
    system: &DecoupledSystem,
    vf: &dyn ValueFunction,
    z: &[f64],
    t: f64,
    nominal_u: &[f64],
    threshold: f64,
) -> Result<Filtered, ControlError> {
    let subs = system.subsystems();
    check_len("nominal control", subs.len(), nominal_u.len())?;
    let clamped: Vec<f64> = subs.iter().zip(nominal_u).map(|(s, &u)| s.u_bound().clamp(u)).collect();
    let value = vf.value(z, t)?;
    if value > threshold {
        return Ok(Filtered { value, u: clamped, active: false, synthesis: None });
    }
    let syn = control_synthesis(system, vf, z, t)?;
    let u = syn.u.iter().zip(&syn.degenerate).zip(&clamped).map(|((&opt, &deg), &nom)| if deg { nom } else { opt }).collect();
    Ok(Filtered { value, u, active: true, synthesis: Some(syn) })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ControlError> {
    if expected != got {
        return Err(ControlError::Length { what, expected, got });
    }
    Ok(())
}

/// Position and velocity of one vehicle along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisState {
    pub p: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalPolicy {
    /// Fixed acceleration per axis.
    ConstantAccel { accel: Vec<f64> },
    /// PD tracking of a fixed point per axis.
    Waypoint { target: Vec<f64>, kp: f64, kv: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PursuerPolicy {
    /// `d*` from the same gradient the evader uses; zero on degenerate axes.
    WorstCase,
    Scripted { accel: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Vehicle 1, controlled by `u`, one entry per axis.
    pub evader: Vec<AxisState>,
    /// Vehicle 2, controlled by `d`.
    pub pursuer: Vec<AxisState>,
    pub nominal: NominalPolicy,
    pub pursuer_policy: PursuerPolicy,
    pub safety_threshold: f64,
    pub sim_dt: f64,
    pub duration: f64,
}

/// Relative state for one subsystem: `(p1 - p2, v1 - v2)` plus `v1` for the
/// augmented kind.
pub fn relative_block(sub: &Subsystem, e: AxisState, p: AxisState) -> Vec<f64> {
    match sub {
        Subsystem::DoubleIntegrator { .. } => vec![e.p - p.p, e.v - p.v],
        Subsystem::RelativeDoubleIntegrator { .. } => vec![e.p - p.p, e.v - p.v, e.v],
    }
}

pub fn relative_state(system: &DecoupledSystem, evader: &[AxisState], pursuer: &[AxisState]) -> Vec<f64> {
    system.subsystems().iter().zip(evader.iter().zip(pursuer)).flat_map(|(s, (&e, &p))| relative_block(s, e, p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub evader: Vec<AxisState>,
    pub pursuer: Vec<AxisState>,
    pub z: Vec<f64>,
    /// Value at the remaining-horizon time.
    pub value: f64,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub filter_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The relative state left the value function's domain; the run stops.
    LeftDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub status: RunStatus,
    /// The start state was already inside the reachable set.
    pub unsafe_start: bool,
}

impl SimulationConfig {
    pub fn validate(&self, system: &DecoupledSystem, horizon: f64, checkpoint: f64) -> Result<(), ControlError> {
        let n = system.subsystems().len();
        check_len("evader axes", n, self.evader.len())?;
        check_len("pursuer axes", n, self.pursuer.len())?;
        match &self.nominal {
            NominalPolicy::ConstantAccel { accel } => check_len("nominal accel", n, accel.len())?,
            NominalPolicy::Waypoint { target, .. } => check_len("waypoint", n, target.len())?,
        }
        if let PursuerPolicy::Scripted { accel } = &self.pursuer_policy {
            check_len("pursuer accel", n, accel.len())?;
        }
        let bad = |m: String| Err(ControlError::BadConfig(m));
        if !(self.sim_dt > 0.0) || self.sim_dt > checkpoint * (1.0 + 1e-12) {
            return bad(format!("sim_dt {} must lie in (0, {checkpoint}]", self.sim_dt));
        }
        if !(self.duration > 0.0) || self.duration > horizon * (1.0 + 1e-12) {
            return bad(format!("duration {} must lie in (0, {horizon}]", self.duration));
        }
        if !(self.safety_threshold >= 0.0) {
            return bad(format!("safety_threshold {} must be non-negative", self.safety_threshold));
        }
        Ok(())
    }

    fn nominal(&self, system: &DecoupledSystem, evader: &[AxisState]) -> Vec<f64> {
        let raw: Vec<f64> = match &self.nominal {
            NominalPolicy::ConstantAccel { accel } => accel.clone(),
            NominalPolicy::Waypoint { target, kp, kv } => {
                evader.iter().zip(target).map(|(s, &goal)| kp * (goal - s.p) - kv * s.v).collect()
            }
        };
        system.subsystems().iter().zip(raw).map(|(s, a)| s.u_bound().clamp(a)).collect()
    }
}

/// Midpoint step of a double integrator under a held acceleration.
fn rk2(s: AxisState, a: f64, dt: f64) -> AxisState {
    let mid = AxisState { p: s.p + 0.5 * dt * s.v, v: s.v + 0.5 * dt * a };
    AxisState { p: s.p + dt * mid.v, v: s.v + dt * a }
}

/// Runs the closed loop. Value lookups use the time-to-go
/// `max(elapsed - duration, -T)`, snapped toward 0.
pub fn simulate(
    config: &SimulationConfig,
    system: &DecoupledSystem,
    vf: &dyn ValueFunction,
) -> Result<Trajectory, ControlError> {
    let times = vf.times();
    let horizon = -*times.last().unwrap();
    let checkpoint = if times.len() > 1 { times[0] - times[1] } else { horizon };
    config.validate(system, horizon, checkpoint)?;

    let steps = (config.duration / config.sim_dt).round() as usize;
    let mut evader = config.evader.clone();
    let mut pursuer = config.pursuer.clone();
    let mut records = Vec::with_capacity(steps + 1);
    let mut status = RunStatus::Completed;
    let mut unsafe_start = false;

    for k in 0..=steps {
        let elapsed = k as f64 * config.sim_dt;
        let t_rem = (elapsed - config.duration).max(-horizon).min(0.0);
        let t_rem = times[snap_time(times, t_rem)?];
        let z = relative_state(system, &evader, &pursuer);
        let nominal = config.nominal(system, &evader);
        let filtered = match safety_filter(system, vf, &z, t_rem, &nominal, config.safety_threshold) {
            Ok(f) => f,
            Err(ControlError::Decouple(
                DecoupleError::OutsideDomain { .. } | DecoupleError::Grid(_),
            )) => {
                status = RunStatus::LeftDomain;
                break;
            }
            Err(e) => return Err(e),
        };
        if k == 0 && filtered.value <= 0.0 {
            unsafe_start = true;
        }
        let d: Vec<f64> = match &config.pursuer_policy {
            PursuerPolicy::Scripted { accel } => {
                system.subsystems().iter().zip(accel).map(|(s, &a)| s.d_bound().clamp(a)).collect()
            }
            PursuerPolicy::WorstCase => {
                let syn = match filtered.synthesis.clone() {
                    Some(s) => s,
                    None => match control_synthesis(system, vf, &z, t_rem) {
                        Ok(s) => s,
                        Err(ControlError::Decouple(DecoupleError::Grid(_))) => {
                            status = RunStatus::LeftDomain;
                            break;
                        }
                        Err(e) => return Err(e),
                    },
                };
                syn.d.iter().zip(&syn.degenerate).map(|(&d, &deg)| if deg { 0.0 } else { d }).collect()
            }
        };
        records.push(Record {
            t: elapsed,
            evader: evader.clone(),
            pursuer: pursuer.clone(),
            z,
            value: filtered.value,
            u: filtered.u.clone(),
            d: d.clone(),
            filter_active: filtered.active,
        });
        if k == steps {
            break;
        }
        for i in 0..evader.len() {
            evader[i] = rk2(evader[i], filtered.u[i], config.sim_dt);
            pursuer[i] = rk2(pursuer[i], d[i], config.sim_dt);
        }
    }
    Ok(Trajectory { records, status, unsafe_start })
}
