//! Implicit surface functions for target sets, pointwise set algebra on
//! fields, and zero-level contour extraction on 2D fields.
//!
//! Sign convention: a set is the zero sublevel set of its implicit surface
//! function, so values are negative inside, zero on the boundary and
//! positive outside.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridSpec, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("no fields to combine")]
    Empty,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("constraint references dimension {dim} of a {ndim}-dimensional subsystem")]
    BadDimension { dim: usize, ndim: usize },
    #[error("surface references subsystem {index}, but only {count} exist")]
    BadSubsystem { index: usize, count: usize },
    #[error("invalid constraint: {0}")]
    BadConstraint(String),
    #[error("contour extraction needs a 2D field, got {0} dimensions")]
    NotPlanar(usize),
}

/// Signed distance to the slab `lower <= x[dim] <= upper` along `dim`.
#[inline]
pub fn sdf_slab(point: &[f64], dim: usize, lower: f64, upper: f64) -> f64 {
    (lower - point[dim]).max(point[dim] - upper)
}

/// Implicit function of `{|x[dim]| >= threshold}`: negative where the
/// magnitude exceeds the threshold.
#[inline]
pub fn sdf_halfspace_outside(point: &[f64], dim: usize, threshold: f64) -> f64 {
    threshold - point[dim].abs()
}

/// One axis-aligned constraint on a subsystem state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// `lower <= x[dim] <= upper`
    Slab { dim: usize, lower: f64, upper: f64 },
    /// `|x[dim]| >= threshold`
    Outside { dim: usize, threshold: f64 },
}

impl Constraint {
    pub fn dim(&self) -> usize {
        match *self {
            Constraint::Slab { dim, .. } | Constraint::Outside { dim, .. } => dim,
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        match *self {
            Constraint::Slab { dim, lower, upper } => sdf_slab(point, dim, lower, upper),
            Constraint::Outside { dim, threshold } => sdf_halfspace_outside(point, dim, threshold),
        }
    }

    fn validate(&self, ndim: usize) -> Result<(), SurfaceError> {
        if self.dim() >= ndim {
            return Err(SurfaceError::BadDimension { dim: self.dim(), ndim });
        }
        match *self {
            Constraint::Slab { lower, upper, .. } if !(lower < upper) => Err(
                SurfaceError::BadConstraint(format!("slab needs lower < upper, got [{lower}, {upper}]")),
            ),
            Constraint::Outside { threshold, .. } if !(threshold > 0.0) => Err(
                SurfaceError::BadConstraint(format!("threshold must be positive, got {threshold}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Target surface for one subsystem: the intersection of its constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSurface {
    pub subsystem: usize,
    pub constraints: Vec<Constraint>,
}

impl SubsystemSurface {
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.eval(point)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sample(&self, grid: &GridSpec) -> ScalarField {
        ScalarField::from_fn(grid, |p| self.eval(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// The full target is the intersection of the subsystem targets.
    Intersection,
    /// The full target is the union of the subsystem targets.
    Union,
}

/// Per-subsystem surfaces plus how they combine into the full target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub surfaces: Vec<SubsystemSurface>,
    pub mode: CombineMode,
}

impl TargetSpec {
    /// Checks that every constraint references a real subsystem dimension.
    /// `dims[i]` is the state dimension of subsystem `i`.
    pub fn validate(&self, dims: &[usize]) -> Result<(), SurfaceError> {
        if self.surfaces.is_empty() {
            return Err(SurfaceError::Empty);
        }
        for s in &self.surfaces {
            let ndim = *dims
                .get(s.subsystem)
                .ok_or(SurfaceError::BadSubsystem { index: s.subsystem, count: dims.len() })?;
            if s.constraints.is_empty() {
                return Err(SurfaceError::BadConstraint(format!(
                    "surface for subsystem {} has no constraints",
                    s.subsystem
                )));
            }
            for c in &s.constraints {
                c.validate(ndim)?;
            }
        }
        Ok(())
    }

    /// Evaluates the full target function given each subsystem's state.
    pub fn eval(&self, states: &[&[f64]]) -> f64 {
        let vals = self.surfaces.iter().map(|s| s.eval(states[s.subsystem]));
        match self.mode {
            CombineMode::Intersection => vals.fold(f64::NEG_INFINITY, f64::max),
            CombineMode::Union => vals.fold(f64::INFINITY, f64::min),
        }
    }
}

fn combine(fields: &[ScalarField], pick: fn(f64, f64) -> f64) -> Result<ScalarField, SurfaceError> {
    let (first, rest) = fields.split_first().ok_or(SurfaceError::Empty)?;
    if rest.iter().any(|f| f.grid() != first.grid()) {
        return Err(GridError::GridMismatch.into());
    }
    let mut out = first.data().to_vec();
    for f in rest {
        for (o, v) in out.iter_mut().zip(f.data()) {
            *o = pick(*o, *v);
        }
    }
    Ok(ScalarField::from_parts(first.grid().clone(), out))
}

/// Pointwise maximum: the sublevel set is the intersection of the inputs'.
pub fn combine_max(fields: &[ScalarField]) -> Result<ScalarField, SurfaceError> {
    combine(fields, f64::max)
}

/// Pointwise minimum: the sublevel set is the union of the inputs'.
pub fn combine_min(fields: &[ScalarField]) -> Result<ScalarField, SurfaceError> {
    combine(fields, f64::min)
}

/// A grid edge identified by its lower node and direction (0 = along x, 1 = along y).
type EdgeKey = (usize, usize, u8);

/// Marching squares at level 0 with linear interpolation along cell edges.
///
/// Nodes with value `<= 0` are classed inside. Saddle cells are split
/// according to the sign of the average of the four corner values. Returns
/// polylines in grid coordinates; closed loops repeat their first vertex.
pub fn extract_zero_contour_2d(field: &ScalarField) -> Result<Vec<Vec<[f64; 2]>>, SurfaceError> {
    let grid = field.grid();
    if grid.ndim() != 2 {
        return Err(SurfaceError::NotPlanar(grid.ndim()));
    }
    let (nx, ny) = (grid.axis(0).count, grid.axis(1).count);
    let v = |i: usize, j: usize| field.data()[i * ny + j];
    let inside = |x: f64| x <= 0.0;

    let vertex = |e: EdgeKey| -> [f64; 2] {
        let (i, j, dir) = e;
        let (a, b, (i2, j2)) = if dir == 0 {
            (v(i, j), v(i + 1, j), (i + 1, j))
        } else {
            (v(i, j), v(i, j + 1), (i, j + 1))
        };
        let t = if a == b { 0.5 } else { a / (a - b) };
        let p0 = [grid.coord(0, i), grid.coord(1, j)];
        let p1 = [grid.coord(0, i2), grid.coord(1, j2)];
        [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            // corners counter-clockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let case = c.iter().enumerate().fold(0u8, |m, (k, &x)| m | ((inside(x) as u8) << k));
            if case == 0 || case == 15 {
                continue;
            }
            // edges: 0 bottom (i,j)-(i+1,j), 1 right (i+1,j)-(i+1,j+1),
            //        2 top (i,j+1)-(i+1,j+1), 3 left (i,j)-(i,j+1)
            let e = [(i, j, 0u8), (i + 1, j, 1u8), (i, j + 1, 0u8), (i, j, 1u8)];
            let center_inside = inside(0.25 * (c[0] + c[1] + c[2] + c[3]));
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                // saddles: corners 0 and 2 inside (5) or 1 and 3 inside (10)
                5 => {
                    if center_inside {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                10 => {
                    if center_inside {
                        &[(3, 0), (1, 2)]
                    } else {
                        &[(3, 2), (0, 1)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segments.push((e[a], e[b]));
            }
        }
    }
    Ok(chain_segments(&segments).into_iter().map(|poly| poly.into_iter().map(vertex).collect()).collect())
}

/// Joins segments sharing endpoints into polylines, in a deterministic order.
fn chain_segments(segments: &[(EdgeKey, EdgeKey)]) -> Vec<Vec<EdgeKey>> {
    let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(k);
        adjacency.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let walk = |start_seg: usize, from: EdgeKey, used: &mut Vec<bool>| -> Vec<EdgeKey> {
        let mut poly = vec![from];
        let mut seg = start_seg;
        let mut at = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            poly.push(next);
            at = next;
            match adjacency[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        poly
    };

    // open chains start at an endpoint used by a single segment
    for k in 0..segments.len() {
        if used[k] {
            continue;
        }
        let (a, b) = segments[k];
        if adjacency[&a].len() == 1 {
            out.push(walk(k, a, &mut used));
        } else if adjacency[&b].len() == 1 {
            out.push(walk(k, b, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            out.push(walk(k, segments[k].0, &mut used));
        }
    }
    out
}
