//! Rectangular grids and scalar fields with multilinear interpolation.

use crate::error::{MrfError, Result};
use crate::scalar::Real;

/// Largest supported state dimension for gridded fields.
pub const MAX_DIM: usize = 4;

/// Axis-aligned box with a node count per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridShape<T> {
    lower: Vec<T>,
    upper: Vec<T>,
    resolution: Vec<usize>,
}

/// Cell containing a point plus the fractional offsets inside the cell.
#[derive(Debug, Clone, Copy)]
struct CellLocation<T> {
    base: [usize; MAX_DIM],
    frac: [T; MAX_DIM],
}

impl<T: Real> GridShape<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>, resolution: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || n > MAX_DIM {
            return Err(MrfError::InvalidArgument(format!(
                "grid dimension {n} not in 1..={MAX_DIM}"
            )));
        }
        if upper.len() != n || resolution.len() != n {
            return Err(MrfError::InvalidArgument(
                "box bounds and resolution must have equal length".into(),
            ));
        }
        for k in 0..n {
            if !(lower[k] < upper[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(MrfError::InvalidArgument(format!(
                    "axis {k}: need finite lower < upper"
                )));
            }
            if resolution[k] < 2 {
                return Err(MrfError::InvalidArgument(format!(
                    "axis {k}: resolution must be at least 2 nodes"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            resolution,
        })
    }

    /// Builds a shape whose spacing along every axis is (approximately) `h`.
    pub fn with_spacing(lower: Vec<T>, upper: Vec<T>, h: T) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(MrfError::InvalidArgument("spacing must be positive".into()));
        }
        let resolution = lower
            .iter()
            .zip(&upper)
            .map(|(&a, &b)| ((b - a) / h).round().to_usize().unwrap_or(1) + 1)
            .collect();
        Self::new(lower, upper, resolution)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> T {
        (self.upper[axis] - self.lower[axis]) / T::from_usize_lossy(self.resolution[axis] - 1)
    }

    pub fn min_spacing(&self) -> T {
        (0..self.dim()).map(|k| self.spacing(k)).fold(T::infinity(), T::min)
    }

    pub fn max_spacing(&self) -> T {
        (0..self.dim()).map(|k| self.spacing(k)).fold(T::zero(), T::max)
    }

    /// Multi-index of a flat node index; the last axis varies fastest.
    pub fn multi_index(&self, mut index: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = index % self.resolution[k];
            index /= self.resolution[k];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.resolution).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn node_into(&self, index: usize, out: &mut [T]) {
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(index, &mut multi);
        for k in 0..self.dim() {
            out[k] = self.lower[k] + self.spacing(k) * T::from_usize_lossy(multi[k]);
        }
    }

    pub fn node(&self, index: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.node_into(index, &mut out);
        out
    }

    /// True when the node lies on a face of the box.
    pub fn is_boundary_node(&self, index: usize) -> bool {
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(index, &mut multi);
        (0..self.dim()).any(|k| multi[k] == 0 || multi[k] + 1 == self.resolution[k])
    }

    fn slack(&self, axis: usize) -> T {
        T::tiny() * (self.upper[axis] - self.lower[axis]).max(T::one())
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let s = self.slack(k);
                x[k] >= self.lower[k] - s && x[k] <= self.upper[k] + s
            })
    }

    fn locate(&self, x: &[T]) -> Option<CellLocation<T>> {
        if !self.contains(x) {
            return None;
        }
        let mut base = [0usize; MAX_DIM];
        let mut frac = [T::zero(); MAX_DIM];
        for k in 0..self.dim() {
            let h = self.spacing(k);
            let cells = self.resolution[k] - 1;
            let mut s = (x[k] - self.lower[k]) / h;
            let nearest = s.round();
            if (s - nearest).abs() <= T::tiny() * nearest.abs().max(T::one()) {
                s = nearest;
            }
            let s = s.max(T::zero()).min(T::from_usize_lossy(cells));
            let mut i = s.floor().to_usize().unwrap_or(0);
            if i >= cells {
                i = cells - 1;
            }
            base[k] = i;
            frac[k] = s - T::from_usize_lossy(i);
        }
        Some(CellLocation { base, frac })
    }

    /// Multilinear interpolation of `values` (one per node) at `x`.
    pub fn interpolate_values(&self, values: &[T], x: &[T]) -> Option<T> {
        let loc = self.locate(x)?;
        let n = self.dim();
        let mut acc = T::zero();
        let mut corner = [0usize; MAX_DIM];
        for bits in 0..(1usize << n) {
            let mut weight = T::one();
            for (k, c) in corner.iter_mut().enumerate().take(n) {
                let f = loc.frac[k];
                if (bits >> k) & 1 == 1 {
                    *c = loc.base[k] + 1;
                    weight = weight * f;
                } else {
                    *c = loc.base[k];
                    weight = weight * (T::one() - f);
                }
            }
            if weight != T::zero() {
                acc = acc + weight * values[self.flat_index(&corner[..n])];
            }
        }
        Some(acc)
    }

    /// Values at the corners of the cell containing `x`.
    pub fn cell_corner_values(&self, values: &[T], x: &[T]) -> Option<Vec<T>> {
        let loc = self.locate(x)?;
        let n = self.dim();
        let mut corner = [0usize; MAX_DIM];
        let mut out = Vec::with_capacity(1 << n);
        for bits in 0..(1usize << n) {
            for (k, c) in corner.iter_mut().enumerate().take(n) {
                *c = loc.base[k] + ((bits >> k) & 1);
            }
            out.push(values[self.flat_index(&corner[..n])]);
        }
        Some(out)
    }
}

/// Scalar field sampled on a [`GridShape`], with the target mask and the node
/// distances to the target.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T> {
    shape: GridShape<T>,
    values: Vec<T>,
    distance: Vec<T>,
    mask: Vec<bool>,
    cap: Option<T>,
}

impl<T: Real> GridField<T> {
    /// Samples `value` at every node. Nodes with `distance <= mask_tol` are
    /// marked as target nodes.
    pub fn from_fn(shape: GridShape<T>, distance: impl Fn(&[T]) -> T, mask_tol: T, value: impl Fn(&[T]) -> T) -> Self {
        let mut x = vec![T::zero(); shape.dim()];
        let len = shape.len();
        let mut values = Vec::with_capacity(len);
        let mut dist = Vec::with_capacity(len);
        let mut mask = Vec::with_capacity(len);
        for i in 0..len {
            shape.node_into(i, &mut x);
            let d = distance(&x);
            dist.push(d);
            mask.push(d <= mask_tol);
            values.push(value(&x));
        }
        Self {
            shape,
            values,
            distance: dist,
            mask,
            cap: None,
        }
    }

    pub fn from_parts(shape: GridShape<T>, values: Vec<T>, distance: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        let len = shape.len();
        if values.len() != len || distance.len() != len || mask.len() != len {
            return Err(MrfError::InvalidArgument(format!(
                "field arrays must have {len} entries"
            )));
        }
        Ok(Self {
            shape,
            values,
            distance,
            mask,
            cap: None,
        })
    }

    /// Same shape, distances and mask with new node values.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            shape: self.shape.clone(),
            values,
            distance: self.distance.clone(),
            mask: self.mask.clone(),
            cap: None,
        }
    }

    /// Marks values at or above `cap` as saturated (unreachable within the box).
    pub fn with_cap(mut self, cap: T) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn shape(&self) -> &GridShape<T> {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn distances(&self) -> &[T] {
        &self.distance
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn cap(&self) -> Option<T> {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_saturated(&self, index: usize) -> bool {
        matches!(self.cap, Some(c) if self.values[index] >= c)
    }

    /// Multilinear interpolation; errors when `x` is outside the box.
    pub fn interpolate(&self, x: &[T]) -> Result<T> {
        self.shape
            .interpolate_values(&self.values, x)
            .ok_or_else(|| MrfError::OutOfDomain {
                point: x.iter().map(|v| v.to_f64_lossy()).collect(),
            })
    }

    /// Interpolation that returns `None` outside the box.
    pub fn try_interpolate(&self, x: &[T]) -> Option<T> {
        self.shape.interpolate_values(&self.values, x)
    }

    /// Non-masked values that are not finite.
    pub fn non_finite_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.mask[i] && !self.values[i].is_finite())
            .collect()
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Interpolation entry point with the operation's name.
pub fn interpolate<T: Real>(field: &GridField<T>, x: &[T]) -> Result<T> {
    field.interpolate(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_1d() -> GridField<f64> {
        let shape = GridShape::new(vec![0.0], vec![1.0], vec![2]).unwrap();
        GridField::from_fn(shape, |_| 1.0, 0.0, |x| x[0])
    }

    #[test]
    fn linear_1d_quarter_point() {
        let f = unit_1d();
        assert!((f.interpolate(&[0.25]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_center_is_corner_average() {
        let shape = GridShape::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 2]).unwrap();
        // corners (0,0)=0, (0,1)=1, (1,0)=1, (1,1)=2
        let f = GridField::from_fn(shape, |_| 1.0, 0.0, |x| x[0] + x[1]);
        assert_eq!(f.interpolate(&[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let shape = GridShape::new(vec![-2.0, -1.3], vec![2.0, 1.7], vec![41, 31]).unwrap();
        let f = GridField::from_fn(shape.clone(), |_| 1.0, 0.0, |x: &[f64]| (3.1 * x[0]).sin() + x[1]);
        let mut x = vec![0.0; 2];
        for i in 0..shape.len() {
            shape.node_into(i, &mut x);
            assert_eq!(f.interpolate(&x).unwrap(), f.values()[i]);
        }
    }

    #[test]
    fn outside_box_is_an_error() {
        let f = unit_1d();
        assert!(matches!(f.interpolate(&[1.5]), Err(MrfError::OutOfDomain { .. })));
    }

    #[test]
    fn single_precision_field() {
        let shape = GridShape::<f32>::new(vec![0.0], vec![1.0], vec![11]).unwrap();
        let f = GridField::from_fn(shape, |_| 1.0, 0.0, |x| 2.0 * x[0]);
        assert!((f.interpolate(&[0.35]).unwrap() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridShape::<f64>::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(GridShape::<f64>::new(vec![1.0], vec![0.0], vec![3]).is_err());
        assert!(GridShape::<f64>::new(vec![0.0; 5], vec![1.0; 5], vec![3; 5]).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_stays_within_cell_corner_range(
            x in -1.0f64..1.0, y in -1.0f64..1.0, seed in 0u64..1000
        ) {
            let shape = GridShape::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![9, 7]).unwrap();
            let s = seed as f64;
            let f = GridField::from_fn(shape.clone(), |_| 1.0, 0.0,
                |p| (p[0] * 7.0 + s).sin() * (p[1] * 3.0 - s).cos());
            let v = f.interpolate(&[x, y]).unwrap();
            let corners = shape.cell_corner_values(f.values(), &[x, y]).unwrap();
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
