//! Exact piecewise solutions of the two-coefficient transmission problem and
//! a finite element oracle for it.
//!
//! Every case is `u = u_NL` on the nonlocal region and `u = A + B (|x| - outer)^2`
//! on the local region, with `A`, `B` fixed by continuity and flux balance
//! at the interface. The outer derivative vanishes, and the global mean is
//! subtracted so that `int u = 0`.

use std::f64::consts::PI;

use crate::fem::P1Space;
use crate::geometry::{Geometry, GeometryError, Mode, Region};
use crate::quadrature;

/// Errors raised by the reference solutions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReferenceError {
    #[error("unknown manufactured case '{0}' (expected mc1, mc2 or mcR1)")]
    UnknownCase(String),
    #[error("diffusion coefficients must be positive, got ({0}, {1})")]
    InvalidCoefficients(f64, f64),
    #[error("case {case} needs interface {interface} < outer {outer}, both positive")]
    InvalidLayout { case: &'static str, interface: f64, outer: f64 },
    #[error("source is incompatible: its integral is {0:e}")]
    Incompatible(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    /// Interval; cosine in the nonlocal part.
    Mc1,
    /// Interval; quadratic in both parts.
    Mc2,
    /// Disk; quadratic in both parts.
    McR1,
}

impl CaseId {
    pub fn by_name(name: &str) -> Result<Self, ReferenceError> {
        match name {
            "mc1" => Ok(CaseId::Mc1),
            "mc2" => Ok(CaseId::Mc2),
            "mcR1" => Ok(CaseId::McR1),
            other => Err(ReferenceError::UnknownCase(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Mc1 => "mc1",
            CaseId::Mc2 => "mc2",
            CaseId::McR1 => "mcR1",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            CaseId::McR1 => Mode::Radial,
            _ => Mode::Interval,
        }
    }
}

/// Exact solution with its source and interface data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub id: CaseId,
    pub interface: f64,
    pub outer: f64,
    pub coeff_local: f64,
    pub coeff_nonlocal: f64,
    /// Constant term of the local piece before the mean shift.
    offset: f64,
    /// Quadratic coefficient of the local piece.
    curvature: f64,
    /// Global mean removed from `u`.
    pub mean: f64,
}

/// Catalog case on its default layout (interface 0.5, outer 1).
pub fn manufactured_case(id: &str, coeff_local: f64, coeff_nonlocal: f64) -> Result<ManufacturedSolution, ReferenceError> {
    ManufacturedSolution::new(CaseId::by_name(id)?, 0.5, 1.0, coeff_local, coeff_nonlocal)
}

impl ManufacturedSolution {
    /// Builds a case on a custom layout.
    pub fn new(id: CaseId, interface: f64, outer: f64, coeff_local: f64, coeff_nonlocal: f64) -> Result<Self, ReferenceError> {
        if !(coeff_local > 0.0 && coeff_nonlocal > 0.0 && coeff_local.is_finite() && coeff_nonlocal.is_finite()) {
            return Err(ReferenceError::InvalidCoefficients(coeff_local, coeff_nonlocal));
        }
        if !(interface > 0.0 && outer > interface && outer.is_finite()) {
            return Err(ReferenceError::InvalidLayout { case: id.name(), interface, outer });
        }
        let (a, o) = (interface, outer);
        let ratio = coeff_nonlocal / coeff_local;
        // Flux balance: coeff_local * 2B (a - o) = coeff_nonlocal * u_NL'(a).
        let (curvature, offset) = match id {
            CaseId::Mc1 => {
                let b = ratio * PI * (PI * a).sin() / (2.0 * (o - a));
                (b, (PI * a).cos() - b * (o - a).powi(2))
            }
            CaseId::Mc2 | CaseId::McR1 => {
                let b = ratio * a / (o - a);
                (b, -a * a - b * (o - a).powi(2))
            }
        };
        let mut case = Self { id, interface, outer, coeff_local, coeff_nonlocal, offset, curvature, mean: 0.0 };
        let g = case.layout();
        let total: f64 = [Region::Local, Region::Nonlocal]
            .into_iter()
            .map(|r| g.integrate(r, |x| case.raw_value(r, x), 64))
            .sum();
        case.mean = total / g.total_measure();
        Ok(case)
    }

    /// Layout geometry without a horizon constraint.
    fn layout(&self) -> Geometry {
        Geometry::new(self.id.mode(), self.interface, self.outer, 0.0).expect("validated layout")
    }

    /// Geometry admitting the given horizon.
    pub fn geometry(&self, horizon: f64) -> Result<Geometry, ReferenceError> {
        Ok(Geometry::new(self.id.mode(), self.interface, self.outer, horizon)?)
    }

    pub fn mode(&self) -> Mode {
        self.id.mode()
    }

    pub fn region_of(&self, x: f64) -> Region {
        if x.abs() <= self.interface {
            Region::Nonlocal
        } else {
            Region::Local
        }
    }

    fn raw_value(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::Nonlocal => match self.id {
                CaseId::Mc1 => (PI * x).cos(),
                CaseId::Mc2 | CaseId::McR1 => -x * x,
            },
            Region::Local => self.offset + self.curvature * (x.abs() - self.outer).powi(2),
        }
    }

    /// Value of the piece belonging to `region`, extended smoothly beyond it.
    pub fn value_in(&self, region: Region, x: f64) -> f64 {
        self.raw_value(region, x) - self.mean
    }

    /// Derivative along the scalar coordinate of the piece belonging to `region`.
    pub fn derivative_in(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::Nonlocal => match self.id {
                CaseId::Mc1 => -PI * (PI * x).sin(),
                CaseId::Mc2 | CaseId::McR1 => -2.0 * x,
            },
            Region::Local => 2.0 * self.curvature * (x.abs() - self.outer) * x.signum(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.value_in(self.region_of(x), x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.derivative_in(self.region_of(x), x)
    }

    /// Source `-div(coeff grad u)` of the piece belonging to `region`.
    pub fn source_in(&self, region: Region, x: f64) -> f64 {
        match region {
            Region::Nonlocal => match self.id {
                CaseId::Mc1 => self.coeff_nonlocal * PI * PI * (PI * x).cos(),
                CaseId::Mc2 => 2.0 * self.coeff_nonlocal,
                CaseId::McR1 => 4.0 * self.coeff_nonlocal,
            },
            Region::Local => match self.id {
                CaseId::Mc1 | CaseId::Mc2 => -2.0 * self.coeff_local * self.curvature,
                CaseId::McR1 => -2.0 * self.coeff_local * self.curvature * (2.0 - self.outer / x),
            },
        }
    }

    pub fn source(&self, x: f64) -> f64 {
        self.source_in(self.region_of(x), x)
    }

    /// Normal derivative at an interface point, from the given side, with the
    /// normal pointing into the local region.
    pub fn normal_derivative(&self, region: Region, point: f64, normal: f64) -> f64 {
        normal * self.derivative_in(region, point)
    }

    /// Second derivative along the coordinate of the nonlocal piece.
    pub fn second_derivative_nonlocal(&self, x: f64) -> f64 {
        match self.id {
            CaseId::Mc1 => -PI * PI * (PI * x).cos(),
            CaseId::Mc2 | CaseId::McR1 => -2.0,
        }
    }
}

/// Finite element solution of the transmission problem.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub geometry: Geometry,
    pub nodes: Vec<f64>,
    pub elements: Vec<[usize; 2]>,
    pub values: Vec<f64>,
    pub h: f64,
}

impl OracleSolution {
    pub fn space(&self) -> P1Space<'_> {
        P1Space::new(&self.geometry, &self.nodes, &self.elements)
    }

    pub fn evaluate(&self, x: f64) -> Option<f64> {
        self.space().evaluate(&self.values, x)
    }

    /// `L2` distance to a function, three Gauss points per element.
    pub fn l2_distance(&self, exact: &dyn Fn(f64) -> f64) -> f64 {
        self.space().error_sq(&self.values, exact, &|_| 0.0).0.sqrt()
    }
}

/// Nodes with a vertex at every region boundary and spacing at most `h`.
fn transmission_nodes(geometry: &Geometry, h: f64) -> Vec<f64> {
    let mut pieces: Vec<(f64, f64)> =
        geometry.components(Region::Local).into_iter().chain(geometry.components(Region::Nonlocal)).collect();
    pieces.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let mut nodes = vec![pieces[0].0];
    for (lo, hi) in pieces {
        let n = ((hi - lo) / h - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=n {
            nodes.push(if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 });
        }
    }
    nodes
}

/// Solves `coeff_local` / `coeff_nonlocal` diffusion with natural outer
/// boundary conditions and zero mean, using piecewise-linear elements.
pub fn solve_transmission_fem(
    geometry: &Geometry,
    coeff_local: f64,
    coeff_nonlocal: f64,
    f: &dyn Fn(f64) -> f64,
    h: f64,
) -> Result<OracleSolution, ReferenceError> {
    if !(coeff_local > 0.0 && coeff_nonlocal > 0.0) {
        return Err(ReferenceError::InvalidCoefficients(coeff_local, coeff_nonlocal));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(GeometryError::InvalidMeshSize(h).into());
    }
    let total: f64 = [Region::Local, Region::Nonlocal]
        .into_iter()
        .flat_map(|r| geometry.components(r).into_iter().map(move |c| (r, c)))
        .map(|(_, (lo, hi))| quadrature::adaptive(&|x| f(x) * geometry.density(x), lo, hi, 1e-13))
        .sum();
    if total.abs() > 1e-8 {
        return Err(ReferenceError::Incompatible(total));
    }
    let nodes = transmission_nodes(geometry, h);
    let n = nodes.len();
    let elements: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
    let space = P1Space::new(geometry, &nodes, &elements);
    let coeff = |e: usize| match geometry.region_of(0.5 * (nodes[e] + nodes[e + 1])) {
        Region::Local => coeff_local,
        Region::Nonlocal => coeff_nonlocal,
    };
    let mut load = space.load(f);
    let mass = space.mass_row();
    // Remove the quadrature-level incompatibility so the pinned solve is exact.
    let defect = load.iter().sum::<f64>() / mass.iter().sum::<f64>();
    load.iter_mut().zip(&mass).for_each(|(l, m)| *l -= defect * m);

    let (mut diag, mut off) = (vec![0.0; n], vec![0.0; n - 1]);
    for (i, j, v) in space.stiffness(coeff) {
        if i == j {
            diag[i] += v;
        } else if j == i + 1 {
            off[i] += v;
        }
    }
    // Pin the first node, solve the tridiagonal remainder, then shift to zero mean.
    let mut values = vec![0.0; n];
    let m = n - 1;
    let (mut c, mut d) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let i = k + 1;
        let sub = if k == 0 { 0.0 } else { off[i - 1] };
        let denom = diag[i] - if k == 0 { 0.0 } else { sub * c[k - 1] };
        c[k] = if i < n - 1 { off[i] / denom } else { 0.0 };
        d[k] = (load[i] - if k == 0 { 0.0 } else { sub * d[k - 1] }) / denom;
    }
    for k in (0..m).rev() {
        values[k + 1] = d[k] - if k + 1 < m { c[k] * values[k + 2] } else { 0.0 };
    }
    let mean = space.integral(&values) / mass.iter().sum::<f64>();
    values.iter_mut().for_each(|v| *v -= mean);
    let h_used = nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(OracleSolution { geometry: *geometry, nodes, elements, values, h: h_used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cases() -> Vec<ManufacturedSolution> {
        let mut out = Vec::new();
        for id in ["mc1", "mc2", "mcR1"] {
            for (l1, l2) in [(1.0, 2.0), (1.0, 1.0), (3.0, 0.5)] {
                out.push(manufactured_case(id, l1, l2).unwrap());
            }
        }
        out
    }

    #[test]
    fn unknown_case_is_rejected() {
        assert!(matches!(manufactured_case("nosuch", 1.0, 1.0), Err(ReferenceError::UnknownCase(_))));
        assert!(manufactured_case("mc1", -1.0, 1.0).is_err());
    }

    #[test]
    fn mc1_matches_closed_form() {
        let c = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let m = (2.0 / PI - PI / 3.0) / 2.0;
        assert_relative_eq!(c.mean, m, max_relative = 1e-12);
        let x = 0.8;
        assert_relative_eq!(c.value(x), -PI / 2.0 + 2.0 * PI * (x - 1.0f64).powi(2) - m, max_relative = 1e-12);
        assert_relative_eq!(c.source(0.1), 2.0 * PI * PI * (0.1 * PI).cos(), max_relative = 1e-14);
        assert_relative_eq!(c.source(-0.7), -4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(c.derivative_in(Region::Local, 0.5), -2.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn radial_mean_matches_closed_form() {
        let c = manufactured_case("mcR1", 1.0, 2.0).unwrap();
        // Polar integral of the raw pieces over the unit disk, divided by pi.
        assert_relative_eq!(c.mean, -47.0 / 96.0, max_relative = 1e-12);
    }

    #[test]
    fn catalog_invariants_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in cases() {
            let a = c.interface;
            let sides: Vec<f64> = if c.mode() == Mode::Interval { vec![-a, a] } else { vec![a] };
            for &p in &sides {
                let n = p.signum();
                let jump = c.value_in(Region::Local, p) - c.value_in(Region::Nonlocal, p);
                assert!(jump.abs() < 1e-13, "{:?} continuity {jump}", c.id);
                let plus = c.coeff_local * c.normal_derivative(Region::Local, p, n);
                let minus = c.coeff_nonlocal * c.normal_derivative(Region::Nonlocal, p, n);
                assert!((plus - minus).abs() < 1e-12, "{:?} flux", c.id);
            }
            assert!(c.derivative_in(Region::Local, c.outer).abs() < 1e-14);
            let g = c.layout();
            let u_int: f64 = [Region::Local, Region::Nonlocal].into_iter().map(|r| g.integrate(r, |x| c.value_in(r, x), 64)).sum();
            let f_int: f64 = [Region::Local, Region::Nonlocal].into_iter().map(|r| g.integrate(r, |x| c.source_in(r, x), 64)).sum();
            assert!(u_int.abs() < 1e-12 && f_int.abs() < 1e-11, "{:?} {u_int} {f_int}", c.id);
            // Source is -div(coeff grad u), checked by central differences of the flux.
            for _ in 0..1000 {
                let lo = if c.mode() == Mode::Radial { 0.01 } else { -c.outer };
                let x: f64 = rng.random_range(lo..c.outer);
                if (x.abs() - a).abs() < 1e-3 || c.outer - x.abs() < 1e-3 {
                    continue;
                }
                let r = c.region_of(x);
                let coeff = if r == Region::Local { c.coeff_local } else { c.coeff_nonlocal };
                let e = 1e-4;
                let flux = |y: f64| g.density(y) * c.derivative_in(r, y);
                let div = (flux(x + e) - flux(x - e)) / (2.0 * e) / g.density(x);
                assert!((c.source_in(r, x) + coeff * div).abs() < 1e-5 * (1.0 + c.source_in(r, x).abs()));
                let du = (c.value_in(r, x + e) - c.value_in(r, x - e)) / (2.0 * e);
                assert!((du - c.derivative_in(r, x)).abs() < 1e-6 * (1.0 + du.abs()));
            }
        }
    }

    #[test]
    fn oracle_zero_source() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.0).unwrap();
        let s = solve_transmission_fem(&g, 1.0, 2.0, &|_| 0.0, 0.01).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_rejects_incompatible_source() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.0).unwrap();
        assert!(matches!(solve_transmission_fem(&g, 1.0, 2.0, &|_| 1.0, 0.01), Err(ReferenceError::Incompatible(_))));
    }

    #[test]
    fn oracle_is_accurate_on_mc1() {
        let c = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let g = c.geometry(0.0).unwrap();
        let s = solve_transmission_fem(&g, 1.0, 2.0, &|x| c.source(x), 1e-3).unwrap();
        assert!(s.l2_distance(&|x| c.value(x)) < 1e-4);
    }

    #[test]
    fn oracle_matches_dense_neumann_solve_for_equal_coefficients() {
        for mode in [Mode::Interval, Mode::Radial] {
            let g = Geometry::new(mode, 0.5, 1.0, 0.0).unwrap();
            let f = |x: f64| match mode {
                Mode::Interval => (PI * x).cos(),
                Mode::Radial => 1.0 - 2.0 * x * x,
            };
            let s = solve_transmission_fem(&g, 1.5, 1.5, &f, 0.02).unwrap();
            // Independent path: dense saddle-point system with a mean multiplier.
            let space = s.space();
            let n = s.nodes.len();
            let mut a = DMatrix::zeros(n + 1, n + 1);
            for (i, j, v) in space.stiffness(|_| 1.5) {
                a[(i, j)] += v;
            }
            let mass = space.mass_row();
            let mut load = space.load(&f);
            let defect = load.iter().sum::<f64>() / mass.iter().sum::<f64>();
            load.iter_mut().zip(&mass).for_each(|(l, m)| *l -= defect * m);
            for i in 0..n {
                a[(i, n)] = mass[i];
                a[(n, i)] = mass[i];
            }
            let mut b = DVector::zeros(n + 1);
            b.rows_mut(0, n).copy_from_slice(&load);
            let x = a.lu().solve(&b).unwrap();
            for i in 0..n {
                assert!((x[i] - s.values[i]).abs() < 1e-10, "{mode:?} {i}");
            }
        }
    }
}
