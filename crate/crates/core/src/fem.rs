//! Continuous piecewise-linear finite elements in the scalar coordinate,
//! with the radial measure `2 pi r dr` in radial mode.

use crate::geometry::Geometry;
use crate::quadrature;

/// Element list over a node array; elements are `[left, right]` node pairs.
#[derive(Debug, Clone, Copy)]
pub struct P1Space<'a> {
    pub geometry: &'a Geometry,
    pub nodes: &'a [f64],
    pub elements: &'a [[usize; 2]],
}

impl<'a> P1Space<'a> {
    pub fn new(geometry: &'a Geometry, nodes: &'a [f64], elements: &'a [[usize; 2]]) -> Self {
        Self { geometry, nodes, elements }
    }

    fn ends(&self, e: usize) -> (usize, usize, f64, f64) {
        let [i, j] = self.elements[e];
        (i, j, self.nodes[i], self.nodes[j])
    }

    /// Element stiffness entries `(i, j, value)` scaled by `coeff(e)`.
    pub fn stiffness(&self, coeff: impl Fn(usize) -> f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(4 * self.elements.len());
        for e in 0..self.elements.len() {
            let (i, j, a, b) = self.ends(e);
            let h = b - a;
            let k = coeff(e) * self.geometry.segment_measure(a, b) / (h * h);
            out.extend([(i, i, k), (i, j, -k), (j, i, -k), (j, j, k)]);
        }
        out
    }

    /// Load vector `int f phi_i` with three Gauss points per element.
    pub fn load(&self, f: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let rule = quadrature::gauss(3);
        let mut out = vec![0.0; self.nodes.len()];
        for e in 0..self.elements.len() {
            let (i, j, a, b) = self.ends(e);
            for (x, w) in rule.mapped(a, b) {
                let t = (x - a) / (b - a);
                let v = w * f(x) * self.geometry.density(x);
                out[i] += v * (1.0 - t);
                out[j] += v * t;
            }
        }
        out
    }

    /// Row sums of the consistent mass matrix, `int phi_i`.
    pub fn mass_row(&self) -> Vec<f64> {
        self.load(&|_| 1.0)
    }

    /// Integral of the interpolant.
    pub fn integral(&self, values: &[f64]) -> f64 {
        self.mass_row().iter().zip(values).map(|(m, v)| m * v).sum()
    }

    /// Broken `(L2^2, H1-seminorm^2)` of `exact - interpolant` with three Gauss points per element.
    pub fn error_sq(
        &self,
        values: &[f64],
        exact: &dyn Fn(f64) -> f64,
        exact_grad: &dyn Fn(f64) -> f64,
    ) -> (f64, f64) {
        let rule = quadrature::gauss(3);
        let (mut l2, mut semi) = (0.0, 0.0);
        for e in 0..self.elements.len() {
            let (i, j, a, b) = self.ends(e);
            let slope = (values[j] - values[i]) / (b - a);
            for (x, w) in rule.mapped(a, b) {
                let t = (x - a) / (b - a);
                let uh = values[i] * (1.0 - t) + values[j] * t;
                let d = w * self.geometry.density(x);
                l2 += d * (exact(x) - uh).powi(2);
                semi += d * (exact_grad(x) - slope).powi(2);
            }
        }
        (l2, semi)
    }

    /// Evaluates the interpolant at `x`, or `None` outside every element.
    pub fn evaluate(&self, values: &[f64], x: f64) -> Option<f64> {
        let e = self.elements.iter().position(|&[i, j]| self.nodes[i] <= x && x <= self.nodes[j])?;
        let (i, j, a, b) = self.ends(e);
        let t = (x - a) / (b - a);
        Some(values[i] * (1.0 - t) + values[j] * t)
    }
}

/// Dense matrix-vector product of assembled entries.
pub fn apply(entries: &[(usize, usize, f64)], x: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &(i, j, v) in entries {
        y[i] += v * x[j];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{local_mesh, Mode};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn stiffness_annihilates_constants() {
        let g = Geometry::new(Mode::Radial, 0.5, 1.0, 0.1).unwrap();
        let m = local_mesh(&g, 0.05).unwrap();
        let s = P1Space::new(&g, &m.nodes, &m.elements);
        let k = s.stiffness(|_| 2.0);
        let y = apply(&k, &vec![1.0; m.nodes.len()], m.nodes.len());
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mass_row_sums_to_measure() {
        let g = Geometry::new(Mode::Radial, 0.5, 1.0, 0.1).unwrap();
        let m = local_mesh(&g, 0.05).unwrap();
        let s = P1Space::new(&g, &m.nodes, &m.elements);
        assert_relative_eq!(s.mass_row().iter().sum::<f64>(), PI * 0.75, max_relative = 1e-13);
    }

    #[test]
    fn linear_functions_have_zero_error() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.1).unwrap();
        let m = local_mesh(&g, 0.05).unwrap();
        let s = P1Space::new(&g, &m.nodes, &m.elements);
        let vals: Vec<f64> = m.nodes.iter().map(|x| 3.0 * x - 1.0).collect();
        let (l2, semi) = s.error_sq(&vals, &|x| 3.0 * x - 1.0, &|_| 3.0);
        assert!(l2 < 1e-28 && semi < 1e-26);
        assert_relative_eq!(s.evaluate(&vals, 0.7).unwrap(), 1.1, max_relative = 1e-14);
        assert!(s.evaluate(&vals, 0.0).is_none());
    }
}
