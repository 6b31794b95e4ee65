//! Rectilinear node-centered grids and scalar fields stored over them.
//!
//! Layout is row-major with the last dimension varying fastest. Every axis
//! includes both endpoints, so an axis with `count` nodes has `count - 1`
//! intervals of width `(upper - lower) / (count - 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible node count per axis (a WENO5 stencil plus interior).
pub const MIN_NODES: usize = 7;

/// Relative slack (in units of spacing) accepted when a query sits on the
/// domain boundary up to round-off.
const EDGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one dimension")]
    NoDimensions,
    #[error("dimension {dim}: count {count} is below the minimum of {MIN_NODES}")]
    TooFewNodes { dim: usize, count: usize },
    #[error("dimension {dim}: upper bound {upper} must exceed lower bound {lower}")]
    EmptyExtent { dim: usize, lower: f64, upper: f64 },
    #[error("dimension {dim}: spacing is not finite and positive")]
    BadSpacing { dim: usize },
    #[error("index {index:?} out of range for counts {counts:?}")]
    IndexOutOfRange { index: Vec<usize>, counts: Vec<usize> },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {point:?} lies outside the grid domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("point {point:?} is closer than one spacing to the grid boundary")]
    TooCloseToBoundary { point: Vec<f64> },
    #[error("data length {got} does not match node count {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("field contains a non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("fields are defined on different grids")]
    GridMismatch,
}

/// One axis of a grid: `count` nodes spread uniformly over `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub count: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Axis {
    pub fn new(count: usize, lower: f64, upper: f64) -> Self {
        Axis { count, lower, upper }
    }
}

/// Row-major flat index (last dimension fastest) of `multi` in an array
/// with the given per-dimension `counts`.
pub fn flat_index(counts: &[usize], multi: &[usize]) -> Result<usize, GridError> {
    if multi.len() != counts.len() {
        return Err(GridError::DimensionMismatch { expected: counts.len(), got: multi.len() });
    }
    let mut flat = 0;
    for (&i, &c) in multi.iter().zip(counts) {
        if i >= c {
            return Err(GridError::IndexOutOfRange { index: multi.to_vec(), counts: counts.to_vec() });
        }
        flat = flat * c + i;
    }
    Ok(flat)
}

/// Validated grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::NoDimensions);
        }
        let mut spacing = Vec::with_capacity(axes.len());
        for (dim, ax) in axes.iter().enumerate() {
            if ax.count < MIN_NODES {
                return Err(GridError::TooFewNodes { dim, count: ax.count });
            }
            // negated comparison also rejects NaN bounds
            if !(ax.upper > ax.lower) {
                return Err(GridError::EmptyExtent { dim, lower: ax.lower, upper: ax.upper });
            }
            let dx = (ax.upper - ax.lower) / (ax.count - 1) as f64;
            if !(dx.is_finite() && dx > 0.0) {
                return Err(GridError::BadSpacing { dim });
            }
            spacing.push(dx);
        }
        let mut strides = vec![1usize; axes.len()];
        for d in (0..axes.len() - 1).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].count;
        }
        let len = strides[0] * axes[0].count;
        Ok(GridSpec { axes, spacing, strides, len })
    }

    /// Grid with the same `count`, `lower`, `upper` on every one of `ndim` axes.
    pub fn uniform(ndim: usize, count: usize, lower: f64, upper: f64) -> Result<Self, GridError> {
        GridSpec::new(vec![Axis::new(count, lower, upper); ndim])
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, dim: usize) -> &Axis {
        &self.axes[dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Coordinate of node `i` along `dim`. The last node maps exactly to `upper`.
    #[inline]
    pub fn coord(&self, dim: usize, i: usize) -> f64 {
        let ax = &self.axes[dim];
        if i + 1 == ax.count {
            ax.upper
        } else {
            ax.lower + i as f64 * self.spacing[dim]
        }
    }

    pub fn linear_index(&self, multi: &[usize]) -> Result<usize, GridError> {
        flat_index(&self.counts(), multi)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ndim());
        for &s in &self.strides {
            out.push(flat / s);
            flat %= s;
        }
        out
    }

    /// Coordinates of the node with flat index `flat`.
    pub fn node_point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.ndim()];
        self.node_point_into(flat, &mut p);
        p
    }

    pub fn node_point_into(&self, mut flat: usize, out: &mut [f64]) {
        for (d, &s) in self.strides.iter().enumerate() {
            out[d] = self.coord(d, flat / s);
            flat %= s;
        }
    }

    /// True when `point` lies in the closed bounding box (up to round-off).
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.ndim()
            && point.iter().zip(&self.axes).zip(&self.spacing).all(|((&x, ax), &dx)| {
                x >= ax.lower - EDGE_SLACK * dx && x <= ax.upper + EDGE_SLACK * dx
            })
    }

    /// Locates `x` along `dim`: returns the lower node of the enclosing cell
    /// and the fractional offset in `[0, 1]`. Caller guarantees containment.
    #[inline]
    pub(crate) fn locate(&self, dim: usize, x: f64) -> (usize, f64) {
        let ax = &self.axes[dim];
        let s = ((x - ax.lower) / self.spacing[dim]).max(0.0);
        let cells = ax.count - 1;
        let i = (s.floor() as usize).min(cells - 1);
        let t = (s - i as f64).clamp(0.0, 1.0);
        (i, t)
    }

    /// The grid obtained by padding every axis with `width` nodes on each side.
    pub fn padded(&self, width: usize) -> GridSpec {
        let axes = self
            .axes
            .iter()
            .zip(&self.spacing)
            .map(|(ax, &dx)| Axis {
                count: ax.count + 2 * width,
                lower: ax.lower - width as f64 * dx,
                upper: ax.upper + width as f64 * dx,
            })
            .collect();
        GridSpec::new(axes).expect("padding a valid grid stays valid")
    }
}

/// Values at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != grid.len() {
            return Err(GridError::DataLength { expected: grid.len(), got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(ScalarField { grid, data })
    }

    /// Skips the finiteness scan; callers have already validated `data`.
    pub(crate) fn from_parts(grid: GridSpec, data: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        ScalarField { grid, data }
    }

    /// Samples `f` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &GridSpec, f: F) -> Self {
        let mut p = vec![0.0; grid.ndim()];
        let data = (0..grid.len())
            .map(|n| {
                grid.node_point_into(n, &mut p);
                f(&p)
            })
            .collect();
        ScalarField { grid: grid.clone(), data }
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        ScalarField { grid: grid.clone(), data: vec![value; grid.len()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn value_at(&self, multi: &[usize]) -> Result<f64, GridError> {
        Ok(self.data[self.grid.linear_index(multi)?])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation; exact at nodes and for multilinear data.
    pub fn interpolate(&self, point: &[f64]) -> Result<f64, GridError> {
        if point.len() != self.grid.ndim() {
            return Err(GridError::DimensionMismatch { expected: self.grid.ndim(), got: point.len() });
        }
        if !self.grid.contains(point) {
            return Err(GridError::OutsideDomain { point: point.to_vec() });
        }
        Ok(self.interpolate_unchecked(point))
    }

    /// Interpolation without bounds checks; points outside are clamped.
    pub(crate) fn interpolate_unchecked(&self, point: &[f64]) -> f64 {
        let nd = self.grid.ndim();
        match nd {
            2 => self.bilinear(point),
            _ => self.multilinear(point),
        }
    }

    #[inline]
    fn bilinear(&self, point: &[f64]) -> f64 {
        let (i, s) = self.grid.locate(0, point[0]);
        let (j, t) = self.grid.locate(1, point[1]);
        let stride = self.grid.strides[0];
        let base = i * stride + j;
        let d = &self.data;
        let a = d[base] + t * (d[base + 1] - d[base]);
        let b = d[base + stride] + t * (d[base + stride + 1] - d[base + stride]);
        a + s * (b - a)
    }

    fn multilinear(&self, point: &[f64]) -> f64 {
        let nd = self.grid.ndim();
        let mut base = 0;
        let mut frac = [0.0f64; 8];
        let mut frac_vec;
        let frac: &mut [f64] = if nd <= 8 {
            &mut frac[..nd]
        } else {
            frac_vec = vec![0.0; nd];
            &mut frac_vec
        };
        for d in 0..nd {
            let (i, t) = self.grid.locate(d, point[d]);
            base += i * self.grid.strides[d];
            frac[d] = t;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << nd) {
            let mut w = 1.0;
            let mut off = base;
            for d in 0..nd {
                if corner >> (nd - 1 - d) & 1 == 1 {
                    w *= frac[d];
                    off += self.grid.strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                acc += w * self.data[off];
            }
        }
        acc
    }

    /// Central difference of interpolated values with one grid spacing per axis.
    pub fn sampled_gradient(&self, point: &[f64]) -> Result<Vec<f64>, GridError> {
        let nd = self.grid.ndim();
        if point.len() != nd {
            return Err(GridError::DimensionMismatch { expected: nd, got: point.len() });
        }
        let inside = point.iter().enumerate().all(|(d, &x)| {
            let ax = &self.grid.axes[d];
            let dx = self.grid.spacing[d];
            x - dx >= ax.lower - EDGE_SLACK * dx && x + dx <= ax.upper + EDGE_SLACK * dx
        });
        if !inside {
            return Err(GridError::TooCloseToBoundary { point: point.to_vec() });
        }
        let mut probe = point.to_vec();
        let mut grad = Vec::with_capacity(nd);
        for d in 0..nd {
            let dx = self.grid.spacing[d];
            probe[d] = point[d] + dx;
            let hi = self.interpolate_unchecked(&probe);
            probe[d] = point[d] - dx;
            let lo = self.interpolate_unchecked(&probe);
            probe[d] = point[d];
            grad.push((hi - lo) / (2.0 * dx));
        }
        Ok(grad)
    }

    /// Pads every dimension by `width` nodes using linear extrapolation from
    /// the two outermost nodes. Interior values are copied unchanged.
    pub fn extend_ghost(&self, width: usize) -> ScalarField {
        assert!(width >= 1, "ghost width must be at least 1");
        let padded = self.grid.padded(width);
        let nd = self.grid.ndim();
        let mut data = vec![0.0; padded.len()];
        // copy interior
        for n in 0..self.grid.len() {
            let mut m = self.grid.multi_index(n);
            m.iter_mut().for_each(|i| *i += width);
            let idx = padded.linear_index(&m).expect("interior maps into padded grid");
            data[idx] = self.data[n];
        }
        // extrapolate one dimension at a time; later dimensions see earlier ghosts
        let counts = padded.counts();
        let mut line = Vec::new();
        for d in 0..nd {
            let stride = padded.strides[d];
            let n_line = counts[d];
            for start in line_starts(&padded, d) {
                line.clear();
                line.extend((0..n_line).map(|k| data[start + k * stride]));
                extrapolate_line(&mut line, width);
                for (k, v) in line.iter().enumerate() {
                    data[start + k * stride] = *v;
                }
            }
        }
        ScalarField { grid: padded, data }
    }
}

/// Overwrites the `width` entries at each end of `line` by linear
/// extrapolation from the two nearest interior entries.
#[inline]
pub(crate) fn extrapolate_line(line: &mut [f64], width: usize) {
    let n = line.len();
    let (a0, a1) = (line[width], line[width + 1]);
    let slope_lo = a1 - a0;
    for k in 1..=width {
        line[width - k] = a0 - k as f64 * slope_lo;
    }
    let (b0, b1) = (line[n - 1 - width], line[n - 2 - width]);
    let slope_hi = b0 - b1;
    for k in 1..=width {
        line[n - 1 - width + k] = b0 + k as f64 * slope_hi;
    }
}

/// Flat indices of the first node of every grid line running along `dim`.
pub(crate) fn line_starts(grid: &GridSpec, dim: usize) -> Vec<usize> {
    let counts = grid.counts();
    let strides = grid.strides();
    let mut starts = Vec::with_capacity(grid.len() / counts[dim]);
    for flat in 0..grid.len() {
        if (flat / strides[dim]) % counts[dim] == 0 {
            starts.push(flat);
        }
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_grid(count: usize, lower: f64, upper: f64) -> GridSpec {
        GridSpec::new(vec![Axis::new(count, lower, upper)]).unwrap()
    }

    #[test]
    fn spacing_examples() {
        assert_eq!(line_grid(11, -5.0, 5.0).spacing()[0], 1.0);
        assert_eq!(line_grid(7, 0.0, 3.0).spacing()[0], 0.5);
        assert_eq!(
            GridSpec::new(vec![Axis::new(5, 0.0, 1.0)]),
            Err(GridError::TooFewNodes { dim: 0, count: 5 })
        );
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(GridSpec::new(vec![]), Err(GridError::NoDimensions));
        assert!(matches!(
            GridSpec::new(vec![Axis::new(9, 1.0, 1.0)]),
            Err(GridError::EmptyExtent { .. })
        ));
        assert!(matches!(
            GridSpec::new(vec![Axis::new(9, 0.0, 1.0), Axis::new(9, 2.0, f64::NAN)]),
            Err(GridError::EmptyExtent { dim: 1, .. })
        ));
    }

    #[test]
    fn linear_index_examples() {
        assert_eq!(flat_index(&[3, 4], &[0, 0]).unwrap(), 0);
        assert_eq!(flat_index(&[3, 4], &[0, 3]).unwrap(), 3);
        assert_eq!(flat_index(&[3, 4], &[2, 3]).unwrap(), 11);
        assert!(flat_index(&[3, 4], &[3, 0]).is_err());

        let g = GridSpec::new(vec![Axis::new(7, 0.0, 1.0), Axis::new(8, 0.0, 1.0)]).unwrap();
        assert_eq!(g.linear_index(&[2, 3]).unwrap(), 2 * 8 + 3);
        assert!(g.linear_index(&[7, 0]).is_err());
        assert!(g.linear_index(&[0]).is_err());
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let g = line_grid(7, 0.0, 6.0);
        let f = ScalarField::from_fn(&g, |p| 2.0 + 2.0 * p[0]);
        assert!((f.interpolate(&[0.5]).unwrap() - 3.0).abs() < 1e-15);
        assert!(f.interpolate(&[6.0 + 1e-3]).is_err());
        assert!(f.interpolate(&[-1.0]).is_err());
    }

    #[test]
    fn bilinear_reproduces_xy() {
        let g = GridSpec::uniform(2, 9, -2.0, 2.0).unwrap();
        let f = ScalarField::from_fn(&g, |p| p[0] * p[1]);
        for &(x, y) in &[(0.3, -1.7), (1.99, 0.01), (-0.77, 0.66)] {
            assert!((f.interpolate(&[x, y]).unwrap() - x * y).abs() < 1e-12);
        }
        let g3 = GridSpec::uniform(3, 7, -1.0, 1.0).unwrap();
        let f3 = ScalarField::from_fn(&g3, |p| p[0] * p[1] * p[2] + p[1]);
        let q = [0.21, -0.43, 0.77];
        assert!((f3.interpolate(&q).unwrap() - (q[0] * q[1] * q[2] + q[1])).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let g = line_grid(21, -1.0, 1.0);
        let f = ScalarField::from_fn(&g, |p| 3.0 * p[0]);
        assert!((f.sampled_gradient(&[0.13]).unwrap()[0] - 3.0).abs() < 1e-12);

        let g2 = GridSpec::new(vec![Axis::new(21, 0.0, 2.0), Axis::new(11, -1.0, 1.0)]).unwrap();
        let sq = ScalarField::from_fn(&g2, |p| p[0] * p[0]);
        let gr = sq.sampled_gradient(&[1.0, 0.2]).unwrap();
        assert!((gr[0] - 2.0).abs() < 1e-12);
        assert!(gr[1].abs() < 1e-12);

        let c = ScalarField::constant(&g2, 4.0);
        assert_eq!(c.sampled_gradient(&[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            c.sampled_gradient(&[0.05, 0.0]),
            Err(GridError::TooCloseToBoundary { .. })
        ));
    }

    #[test]
    fn ghost_examples() {
        let g = line_grid(7, 0.0, 6.0);
        let f = ScalarField::new(g.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let e = f.extend_ghost(1);
        assert_eq!(e.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(e.grid().axis(0).lower, -1.0);

        let mut line = vec![0.0, 0.0, 0.0, 2.0, 4.0, 0.0, 0.0];
        extrapolate_line(&mut line, 2);
        assert_eq!(line, vec![-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0]);

        let c = ScalarField::constant(&GridSpec::uniform(2, 7, 0.0, 1.0).unwrap(), 2.5);
        assert!(c.extend_ghost(3).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn ghost_extends_affine_exactly_in_2d() {
        let g = GridSpec::new(vec![Axis::new(7, 0.0, 6.0), Axis::new(8, 0.0, 7.0)]).unwrap();
        let f = ScalarField::from_fn(&g, |p| 2.0 * p[0] - p[1] + 1.0);
        let e = f.extend_ghost(3);
        let expect = ScalarField::from_fn(e.grid(), |p| 2.0 * p[0] - p[1] + 1.0);
        for (a, b) in e.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn index_round_trip(c0 in 7usize..12, c1 in 7usize..12, c2 in 7usize..10, seed in 0usize..10_000) {
            let g = GridSpec::new(vec![
                Axis::new(c0, 0.0, 1.0), Axis::new(c1, -1.0, 1.0), Axis::new(c2, 2.0, 3.0),
            ]).unwrap();
            let flat = seed % g.len();
            let m = g.multi_index(flat);
            prop_assert_eq!(g.linear_index(&m).unwrap(), flat);
        }

        #[test]
        fn interpolation_is_bounded_by_cell_corners(
            vals in proptest::collection::vec(-10.0f64..10.0, 49),
            x in 0.0f64..1.0, y in 0.0f64..1.0,
        ) {
            let g = GridSpec::uniform(2, 7, 0.0, 1.0).unwrap();
            let f = ScalarField::new(g.clone(), vals).unwrap();
            let v = f.interpolate(&[x, y]).unwrap();
            let (i, _) = g.locate(0, x);
            let (j, _) = g.locate(1, y);
            let corners = [
                f.value_at(&[i, j]).unwrap(), f.value_at(&[i + 1, j]).unwrap(),
                f.value_at(&[i, j + 1]).unwrap(), f.value_at(&[i + 1, j + 1]).unwrap(),
            ];
            let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn interpolation_exact_at_nodes(vals in proptest::collection::vec(-5.0f64..5.0, 7 * 9)) {
            let g = GridSpec::new(vec![Axis::new(7, -1.0, 2.0), Axis::new(9, 0.0, 4.0)]).unwrap();
            let f = ScalarField::new(g.clone(), vals).unwrap();
            for n in 0..g.len() {
                let p = g.node_point(n);
                prop_assert!((f.interpolate(&p).unwrap() - f.data()[n]).abs() < 1e-12);
            }
        }

        #[test]
        fn ghost_leaves_interior_bit_identical(vals in proptest::collection::vec(-5.0f64..5.0, 49), w in 1usize..4) {
            let g = GridSpec::uniform(2, 7, 0.0, 1.0).unwrap();
            let f = ScalarField::new(g.clone(), vals).unwrap();
            let e = f.extend_ghost(w);
            for n in 0..g.len() {
                let m: Vec<usize> = g.multi_index(n).iter().map(|i| i + w).collect();
                prop_assert_eq!(e.value_at(&m).unwrap().to_bits(), f.data()[n].to_bits());
            }
        }
    }
}
