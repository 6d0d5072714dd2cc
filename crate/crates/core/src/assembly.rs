//! Coupled block system: assembly, solution and the associated bilinear forms.
//!
//! Unknowns are ordered `[u_L (local nodes), u_NL (cells), u_Gamma (interface
//! nodes), multiplier]`. The multiplier column is the left null vector of the
//! unconstrained operator (`1` on local rows, `|c_i|` on nonlocal rows), so it
//! vanishes whenever the right-hand side is compatible.

use crate::fem::P1Space;
use crate::geometry::{interface_quadrature, local_mesh, volume_mesh, Geometry, GeometryError, LocalMesh, Region, SurfaceQuadrature, VolumeMesh};
use crate::kernel::ScaledKernel;
use crate::linalg::{self, CsrMatrix, DenseLu};
use crate::nonlocal_ops::{compute_interface_scale, compute_weights, InterfaceScale, NonlocalWeights, OpsError, SourceData};

/// Errors raised while building the discrete problem.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("diffusion coefficients must be positive, got ({0}, {1})")]
    InvalidCoefficients(f64, f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error("interface node {node} at {point} is not a local mesh vertex")]
    Misaligned { node: usize, point: f64 },
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

/// Errors raised by the linear solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("block system is numerically singular")]
    Singular,
    #[error("solution residual {residual:e} exceeds tolerance {tol:e}")]
    Inaccurate { residual: f64, tol: f64 },
    #[error("iterative solver stalled after {iterations} iterations at residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("right-hand side has length {got}, system size is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Diffusion coefficients of the local and nonlocal regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub coeff_local: f64,
    pub coeff_nonlocal: f64,
}

impl ProblemSpec {
    pub fn new(coeff_local: f64, coeff_nonlocal: f64) -> Result<Self, AssemblyError> {
        if !(coeff_local > 0.0 && coeff_nonlocal > 0.0 && coeff_local.is_finite() && coeff_nonlocal.is_finite()) {
            return Err(AssemblyError::InvalidCoefficients(coeff_local, coeff_nonlocal));
        }
        Ok(Self { coeff_local, coeff_nonlocal })
    }
}

/// Meshes, kernel tables and interface data for one horizon.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub geometry: Geometry,
    pub kernel: ScaledKernel,
    pub local: LocalMesh,
    pub mesh: VolumeMesh,
    pub surface: SurfaceQuadrature,
    pub weights: NonlocalWeights,
    pub scale: InterfaceScale,
    /// Unit-coefficient stiffness on the local mesh.
    pub stiffness: CsrMatrix,
    /// Row sums of the local mass matrix.
    pub local_mass: Vec<f64>,
}

impl Discretization {
    /// Builds meshes and all kernel tables; the geometry must admit the kernel horizon.
    pub fn new(geometry: Geometry, kernel: ScaledKernel, h_local: f64, h_nonlocal: f64) -> Result<Self, AssemblyError> {
        let geometry = Geometry::new(geometry.mode(), geometry.interface(), geometry.outer(), kernel.horizon())?;
        let local = local_mesh(&geometry, h_local)?;
        let mesh = volume_mesh(&geometry, Region::Nonlocal, h_nonlocal)?;
        let surface = interface_quadrature(&geometry);
        for (k, (node, &p)) in surface.nodes.iter().zip(&local.interface_nodes).enumerate() {
            if (local.nodes[p] - node.point).abs() > 1e-12 * (1.0 + node.point.abs()) {
                return Err(AssemblyError::Misaligned { node: k, point: node.point });
            }
        }
        let weights = compute_weights(&geometry, &mesh, &surface, &kernel)?;
        let scale = compute_interface_scale(&geometry, &surface, &weights, &kernel)?;
        let space = P1Space::new(&geometry, &local.nodes, &local.elements);
        let stiffness = CsrMatrix::from_triplets(local.nodes.len(), space.stiffness(|_| 1.0));
        let local_mass = space.mass_row();
        Ok(Self { geometry, kernel, local, mesh, surface, weights, scale, stiffness, local_mass })
    }

    pub fn horizon(&self) -> f64 {
        self.kernel.horizon()
    }

    pub fn layout(&self) -> Layout {
        Layout { local: self.local.nodes.len(), nonlocal: self.mesh.len(), interface: self.surface.len() }
    }

    pub fn space(&self) -> P1Space<'_> {
        P1Space::new(&self.geometry, &self.local.nodes, &self.local.elements)
    }

    /// `int_L u_L + int_NL u_NL` in the discrete sense.
    pub fn mean_functional(&self, u_local: &[f64], u_nonlocal: &[f64]) -> f64 {
        linalg::dot(&self.local_mass, u_local) + linalg::dot(&self.weights.cell_measures, u_nonlocal)
    }

    /// Smoothed average of cell values at interface node `k`.
    pub fn interface_average(&self, u_nonlocal: &[f64], k: usize) -> f64 {
        self.weights.interface_cells[k].iter().map(|&(i, g)| g * u_nonlocal[i]).sum::<f64>()
            / self.weights.interface_smoothed_mass[k]
    }

    /// Interface unknowns eliminated from a pair: `(u_L - smoothed average) / scale`.
    pub fn interface_values(&self, u_local: &[f64], u_nonlocal: &[f64]) -> Vec<f64> {
        (0..self.surface.len())
            .map(|k| {
                let trace = u_local[self.local.interface_nodes[k]];
                (trace - self.interface_average(u_nonlocal, k)) / self.scale.values[k]
            })
            .collect()
    }

    /// Nonlocal operator `w_i u_i - sum_j A_ij u_j` at every cell.
    fn nonlocal_difference(&self, u: &[f64]) -> Vec<f64> {
        self.weights
            .pairs
            .iter()
            .zip(&self.weights.cell_mass)
            .enumerate()
            .map(|(i, (row, w))| w * u[i] - row.iter().map(|&(j, a)| a * u[j]).sum::<f64>())
            .collect()
    }

    /// Interface flux spread to cells: `sum_k G_ki s_k u_Gamma_k / wbar_k` for every cell `i`.
    fn interface_spread(&self, u_interface: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.len()];
        for (k, row) in self.weights.interface_cells.iter().enumerate() {
            let c = self.surface.nodes[k].weight * u_interface[k] / self.weights.interface_smoothed_mass[k];
            for &(i, g) in row {
                out[i] += g * c;
            }
        }
        out
    }
}

/// Sizes of the unknown groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub local: usize,
    pub nonlocal: usize,
    pub interface: usize,
}

impl Layout {
    pub fn nonlocal_offset(&self) -> usize {
        self.local
    }

    pub fn interface_offset(&self) -> usize {
        self.local + self.nonlocal
    }

    pub fn multiplier_index(&self) -> usize {
        self.local + self.nonlocal + self.interface
    }

    pub fn size(&self) -> usize {
        self.multiplier_index() + 1
    }
}

/// Assembled operator and right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub layout: Layout,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Assembles the coupled operator.
pub fn assemble_operator(spec: &ProblemSpec, disc: &Discretization) -> CsrMatrix {
    let layout = disc.layout();
    let (l1, l2) = (spec.coeff_local, spec.coeff_nonlocal);
    let delta2 = disc.horizon() * disc.horizon();
    let (off_nl, off_g, mult) = (layout.nonlocal_offset(), layout.interface_offset(), layout.multiplier_index());
    let w = &disc.weights;
    let mut t: Vec<(usize, usize, f64)> = Vec::new();

    for i in 0..layout.local {
        for (j, v) in disc.stiffness.row(i) {
            t.push((i, j, l1 * v));
        }
        t.push((i, mult, 1.0));
        t.push((mult, i, disc.local_mass[i]));
    }
    for (k, node) in disc.surface.nodes.iter().enumerate() {
        let p = disc.local.interface_nodes[k];
        t.push((p, off_g + k, l2 * node.weight));
    }

    for i in 0..layout.nonlocal {
        let row = off_nl + i;
        t.push((row, row, l2 / delta2 * w.cell_mass[i]));
        for &(j, a) in &w.pairs[i] {
            t.push((row, off_nl + j, -l2 / delta2 * a));
        }
        t.push((row, mult, w.cell_measures[i]));
        t.push((mult, row, w.cell_measures[i]));
    }
    for (k, cells) in w.interface_cells.iter().enumerate() {
        let s = disc.surface.nodes[k].weight;
        let wbar = w.interface_smoothed_mass[k];
        for &(i, g) in cells {
            t.push((off_nl + i, off_g + k, -l2 * g * s / (w.cell_measures[i] * wbar)));
            t.push((off_g + k, off_nl + i, l2 * g / wbar));
        }
        t.push((off_g + k, disc.local.interface_nodes[k], -l2));
        t.push((off_g + k, off_g + k, l2 * disc.scale.values[k]));
    }
    CsrMatrix::from_triplets(layout.size(), t)
}

/// Right-hand side `[local load, nonlocal source, 0, 0]`.
pub fn assemble_rhs(disc: &Discretization, source: &SourceData) -> Result<Vec<f64>, AssemblyError> {
    let layout = disc.layout();
    check_len("local load", layout.local, source.local_load.len())?;
    check_len("nonlocal source", layout.nonlocal, source.nonlocal.len())?;
    let mut rhs = vec![0.0; layout.size()];
    rhs[..layout.local].copy_from_slice(&source.local_load);
    rhs[layout.local..layout.interface_offset()].copy_from_slice(&source.nonlocal);
    Ok(rhs)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), AssemblyError> {
    if expected == got {
        Ok(())
    } else {
        Err(AssemblyError::DimensionMismatch { what, expected, got })
    }
}

/// Assembles operator and right-hand side.
pub fn assemble_system(spec: &ProblemSpec, disc: &Discretization, source: &SourceData) -> Result<BlockSystem, AssemblyError> {
    Ok(BlockSystem { layout: disc.layout(), matrix: assemble_operator(spec, disc), rhs: assemble_rhs(disc, source)? })
}

/// Linear solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SolverMethod {
    #[default]
    Direct,
    Iterative { tol: f64, restart: usize, max_iter: usize },
}

/// Relative residual accepted for a solution.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Solution of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub u_local: Vec<f64>,
    pub u_nonlocal: Vec<f64>,
    pub u_interface: Vec<f64>,
    pub multiplier: f64,
    /// `||A x - b|| / ||b||` (absolute when `b = 0`).
    pub residual: f64,
    pub iterations: usize,
    /// Discrete `int u_L + int u_NL`.
    pub constraint: f64,
}

impl CoupledSolution {
    fn from_vector(layout: Layout, x: &[f64], residual: f64, iterations: usize, disc: &Discretization) -> Self {
        let u_local = x[..layout.local].to_vec();
        let u_nonlocal = x[layout.local..layout.interface_offset()].to_vec();
        let u_interface = x[layout.interface_offset()..layout.multiplier_index()].to_vec();
        let constraint = disc.mean_functional(&u_local, &u_nonlocal);
        Self { u_local, u_nonlocal, u_interface, multiplier: x[layout.multiplier_index()], residual, iterations, constraint }
    }

    pub fn triple(&self) -> Triple {
        Triple { local: self.u_local.clone(), nonlocal: self.u_nonlocal.clone(), interface: self.u_interface.clone() }
    }
}

fn relative_residual(matrix: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = matrix.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let bn = linalg::norm(b);
    let rn = linalg::norm(&r);
    if bn > 0.0 {
        rn / bn
    } else {
        rn
    }
}

/// Operator prepared for repeated solves.
pub struct Factorized<'a> {
    disc: &'a Discretization,
    layout: Layout,
    matrix: CsrMatrix,
    method: SolverMethod,
    lu: Option<DenseLu>,
}

impl<'a> Factorized<'a> {
    /// Assembles and, for the direct method, factorizes the operator.
    pub fn new(spec: &ProblemSpec, disc: &'a Discretization, method: SolverMethod) -> Result<Self, SolverError> {
        let matrix = assemble_operator(spec, disc);
        let lu = match method {
            SolverMethod::Direct => Some(DenseLu::new(&matrix).ok_or(SolverError::Singular)?),
            SolverMethod::Iterative { .. } => None,
        };
        Ok(Self { disc, layout: disc.layout(), matrix, method, lu })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves for one right-hand side and checks the residual.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<CoupledSolution, SolverError> {
        if rhs.len() != self.layout.size() {
            return Err(SolverError::DimensionMismatch { expected: self.layout.size(), got: rhs.len() });
        }
        let (x, iterations) = match (self.method, &self.lu) {
            (SolverMethod::Direct, Some(lu)) => {
                let mut x = lu.solve(rhs).ok_or(SolverError::Singular)?;
                // One refinement step against the sparse operator.
                let ax = self.matrix.matvec(&x);
                let r: Vec<f64> = rhs.iter().zip(&ax).map(|(p, q)| p - q).collect();
                if let Some(dx) = lu.solve(&r) {
                    x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
                }
                (x, 1)
            }
            (SolverMethod::Iterative { tol, restart, max_iter }, _) => {
                let out = linalg::gmres(&self.matrix, rhs, tol, restart, max_iter);
                if !out.converged {
                    return Err(SolverError::NotConverged { iterations: out.iterations, residual: out.relative_residual });
                }
                (out.x, out.iterations)
            }
            (SolverMethod::Direct, None) => return Err(SolverError::Singular),
        };
        let residual = relative_residual(&self.matrix, &x, rhs);
        let tol = match self.method {
            SolverMethod::Direct => RESIDUAL_TOL,
            SolverMethod::Iterative { tol, .. } => RESIDUAL_TOL.max(10.0 * tol),
        };
        if !(residual <= tol) {
            return Err(SolverError::Inaccurate { residual, tol });
        }
        Ok(CoupledSolution::from_vector(self.layout, &x, residual, iterations, self.disc))
    }

    /// Solves with the source data of `source`.
    pub fn solve_source(&self, source: &SourceData) -> Result<CoupledSolution, SolverError> {
        let rhs = assemble_rhs(self.disc, source).map_err(|_| SolverError::DimensionMismatch {
            expected: self.layout.size(),
            got: source.local_load.len() + source.nonlocal.len(),
        })?;
        self.solve_rhs(&rhs)
    }
}

/// Solves an assembled system.
pub fn solve(system: &BlockSystem, disc: &Discretization, method: SolverMethod) -> Result<CoupledSolution, SolverError> {
    let lu = match method {
        SolverMethod::Direct => Some(DenseLu::new(&system.matrix).ok_or(SolverError::Singular)?),
        SolverMethod::Iterative { .. } => None,
    };
    let f = Factorized { disc, layout: system.layout, matrix: system.matrix.clone(), method, lu };
    f.solve_rhs(&system.rhs)
}

/// Full set of unknowns excluding the multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub local: Vec<f64>,
    pub nonlocal: Vec<f64>,
    pub interface: Vec<f64>,
}

/// Terms of the diagonal energy identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    /// `coeff_local * |grad u_L|^2`.
    pub gradient: f64,
    /// `coeff_nonlocal * sum s_k scale_k u_Gamma_k^2`.
    pub interface: f64,
    /// `coeff_nonlocal / (2 delta^2) * sum_ij M_ij (u_i - u_j)^2`.
    pub nonlocal: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.gradient + self.interface + self.nonlocal
    }
}

/// Evaluates the three nonnegative energy terms directly.
pub fn energy(spec: &ProblemSpec, disc: &Discretization, local: &[f64], nonlocal: &[f64], interface: &[f64]) -> Energy {
    let w = &disc.weights;
    let delta2 = disc.horizon() * disc.horizon();
    let gradient = spec.coeff_local * linalg::dot(local, &disc.stiffness.matvec(local));
    let interface = spec.coeff_nonlocal
        * disc.surface.nodes.iter().enumerate().map(|(k, n)| n.weight * disc.scale.values[k] * interface[k].powi(2)).sum::<f64>();
    let mut pair_sum = 0.0;
    for (i, row) in w.pairs.iter().enumerate() {
        for &(j, a) in row {
            pair_sum += w.cell_measures[i] * a * (nonlocal[i] - nonlocal[j]).powi(2);
        }
    }
    Energy { gradient, interface, nonlocal: spec.coeff_nonlocal / (2.0 * delta2) * pair_sum }
}

/// Shared terms 1-4 of both forms for given `u_Gamma`.
fn pair_terms(spec: &ProblemSpec, disc: &Discretization, u: &Triple, v_local: &[f64], v_nonlocal: &[f64]) -> f64 {
    let (l1, l2) = (spec.coeff_local, spec.coeff_nonlocal);
    let delta2 = disc.horizon() * disc.horizon();
    let stiff = l1 * linalg::dot(v_local, &disc.stiffness.matvec(&u.local));
    let coupling: f64 = disc
        .surface
        .nodes
        .iter()
        .enumerate()
        .map(|(k, n)| l2 * n.weight * u.interface[k] * v_local[disc.local.interface_nodes[k]])
        .sum();
    let diff = disc.nonlocal_difference(&u.nonlocal);
    let nonlocal: f64 = l2 / delta2
        * (0..diff.len()).map(|i| disc.weights.cell_measures[i] * v_nonlocal[i] * diff[i]).sum::<f64>();
    let spread = disc.interface_spread(&u.interface);
    let flux = -l2 * linalg::dot(v_nonlocal, &spread);
    stiff + coupling + nonlocal + flux
}

/// Reduced form on pairs, with the interface unknown eliminated.
pub fn bilinear_b(spec: &ProblemSpec, disc: &Discretization, u: (&[f64], &[f64]), v: (&[f64], &[f64])) -> f64 {
    let interface = disc.interface_values(u.0, u.1);
    let triple = Triple { local: u.0.to_vec(), nonlocal: u.1.to_vec(), interface };
    pair_terms(spec, disc, &triple, v.0, v.1)
}

/// Extended form on triples.
pub fn bilinear_b_hat(spec: &ProblemSpec, disc: &Discretization, u: &Triple, v: &Triple) -> f64 {
    let l2 = spec.coeff_nonlocal;
    let base = pair_terms(spec, disc, u, &v.local, &v.nonlocal);
    let extra: f64 = disc
        .surface
        .nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let gap = u.local[disc.local.interface_nodes[k]] - disc.interface_average(&u.nonlocal, k);
            -l2 * n.weight * v.interface[k] * gap + l2 * n.weight * disc.scale.values[k] * u.interface[k] * v.interface[k]
        })
        .sum();
    base + extra
}

/// Right-hand side pairing `sum load_i v_L,i + sum |c_i| f_i v_NL,i`.
pub fn source_pairing(disc: &Discretization, source: &SourceData, v: &Triple) -> f64 {
    linalg::dot(&source.local_load, &v.local)
        + (0..disc.mesh.len()).map(|i| disc.weights.cell_measures[i] * source.nonlocal[i] * v.nonlocal[i]).sum::<f64>()
}

/// Largest cell mismatch in the pointwise recovery identity
/// `u_i = avg_i + delta^2/w_i * interface flux + delta^2/(coeff w_i) * f_i`.
pub fn nl_recovery_residual(spec: &ProblemSpec, disc: &Discretization, solution: &CoupledSolution, source: &SourceData) -> f64 {
    let w = &disc.weights;
    let delta2 = disc.horizon() * disc.horizon();
    let spread = disc.interface_spread(&solution.u_interface);
    (0..disc.mesh.len())
        .map(|i| {
            let avg = w.pairs[i].iter().map(|&(j, a)| a * solution.u_nonlocal[j]).sum::<f64>() / w.cell_mass[i];
            let flux = delta2 / w.cell_mass[i] * spread[i] / w.cell_measures[i];
            let rhs = source.nonlocal[i] - w.cell_measures[i] * solution.multiplier;
            let src = delta2 * rhs / (spec.coeff_nonlocal * w.cell_mass[i]);
            (solution.u_nonlocal[i] - (avg + flux + src)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mode;
    use crate::kernel::KernelProfile;
    use crate::nonlocal_ops::assemble_source;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn disc(mode: Mode, delta: f64) -> Discretization {
        let g = Geometry::new(mode, 0.5, 1.0, delta).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), delta, g.dim()).unwrap();
        Discretization::new(g, k, delta / 8.0, delta / 8.0).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dimensions_of_small_system() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.1).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 1).unwrap();
        let d = Discretization::new(g, k, 1.0 / 6.0, 0.025).unwrap();
        let l = d.layout();
        assert_eq!((l.local, l.nonlocal, l.interface), (8, 40, 2));
        let s = assemble_system(&ProblemSpec::new(1.0, 2.0).unwrap(), &d, &assemble_source(&g, &d.local, &d.mesh, &d.kernel, &|_| 0.0)).unwrap();
        assert_eq!(s.matrix.n, 8 + 40 + 2 + 1);
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(ProblemSpec::new(0.0, 1.0).is_err());
        assert!(ProblemSpec::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        for mode in [Mode::Interval, Mode::Radial] {
            let d = disc(mode, 0.1);
            let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|_| 0.0);
            let sys = assemble_system(&ProblemSpec::new(1.0, 2.0).unwrap(), &d, &src).unwrap();
            assert!(sys.rhs.iter().all(|v| *v == 0.0));
            let sol = solve(&sys, &d, SolverMethod::Direct).unwrap();
            assert!(sol.u_local.iter().chain(&sol.u_nonlocal).chain(&sol.u_interface).all(|v| *v == 0.0));
            assert_eq!(sol.multiplier, 0.0);
        }
    }

    #[test]
    fn multiplier_column_is_left_null_vector() {
        let d = disc(Mode::Radial, 0.1);
        let m = assemble_operator(&ProblemSpec::new(1.5, 0.7).unwrap(), &d);
        let l = d.layout();
        let mut y = vec![0.0; l.size()];
        y[..l.local].fill(1.0);
        y[l.local..l.interface_offset()].copy_from_slice(&d.weights.cell_measures);
        let z = m.left_matvec(&y);
        let scale = m.vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for v in &z[..l.multiplier_index()] {
            assert!(v.abs() < 1e-12 * scale, "{v}");
        }
    }

    #[test]
    fn compatible_source_has_vanishing_multiplier_and_mean() {
        let d = disc(Mode::Interval, 0.1);
        let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|x| (PI * x).cos() + 0.3 * x);
        let sys = assemble_system(&ProblemSpec::new(1.0, 2.0).unwrap(), &d, &src).unwrap();
        let a = solve(&sys, &d, SolverMethod::Direct).unwrap();
        let b = solve(&sys, &d, SolverMethod::Direct).unwrap();
        assert_eq!(a, b);
        assert!(a.residual <= RESIDUAL_TOL);
        assert!(a.multiplier.abs() < 1e-10);
        assert!(a.constraint.abs() < 1e-10);
    }

    #[test]
    fn iterative_matches_direct() {
        let d = disc(Mode::Interval, 0.1);
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|x| (PI * x).cos());
        let sys = assemble_system(&spec, &d, &src).unwrap();
        let a = solve(&sys, &d, SolverMethod::Direct).unwrap();
        let b = solve(&sys, &d, SolverMethod::Iterative { tol: 1e-12, restart: 200, max_iter: 5000 }).unwrap();
        for (p, q) in a.u_nonlocal.iter().zip(&b.u_nonlocal) {
            assert!((p - q).abs() < 1e-8, "{p} {q}");
        }
    }

    #[test]
    fn diagonal_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [Mode::Interval, Mode::Radial] {
            let d = disc(mode, 0.1);
            let spec = ProblemSpec::new(1.3, 0.6).unwrap();
            let l = d.layout();
            let ul = random_vec(&mut rng, l.local);
            let un = random_vec(&mut rng, l.nonlocal);
            let b = bilinear_b(&spec, &d, (&ul, &un), (&ul, &un));
            let e = energy(&spec, &d, &ul, &un, &d.interface_values(&ul, &un));
            assert!((b - e.total()).abs() <= 1e-10 * e.total(), "{b} {}", e.total());
            let t = Triple { local: ul.clone(), nonlocal: un.clone(), interface: random_vec(&mut rng, l.interface) };
            let bh = bilinear_b_hat(&spec, &d, &t, &t);
            let eh = energy(&spec, &d, &t.local, &t.nonlocal, &t.interface);
            assert!((bh - eh.total()).abs() <= 1e-10 * eh.total());
        }
    }

    #[test]
    fn extended_form_reduces_to_pair_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = disc(Mode::Interval, 0.1);
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let l = d.layout();
        let (ul, un) = (random_vec(&mut rng, l.local), random_vec(&mut rng, l.nonlocal));
        let (vl, vn) = (random_vec(&mut rng, l.local), random_vec(&mut rng, l.nonlocal));
        let u = Triple { local: ul.clone(), nonlocal: un.clone(), interface: d.interface_values(&ul, &un) };
        let v = Triple { local: vl.clone(), nonlocal: vn.clone(), interface: vec![0.0; l.interface] };
        let b = bilinear_b(&spec, &d, (&ul, &un), (&vl, &vn));
        let bh = bilinear_b_hat(&spec, &d, &u, &v);
        assert!((b - bh).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn recovery_identity_and_sensitivity() {
        let d = disc(Mode::Radial, 0.1);
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|r| 4.0 - 8.0 * r * r);
        let sol = solve(&assemble_system(&spec, &d, &src).unwrap(), &d, SolverMethod::Direct).unwrap();
        let scale = sol.u_nonlocal.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(nl_recovery_residual(&spec, &d, &sol, &src) <= 1e-9 * scale);
        let mut bad = sol.clone();
        bad.u_nonlocal[3] += 1.0;
        let r = nl_recovery_residual(&spec, &d, &bad, &src);
        assert!(r > 0.5 && r <= 1.0 + 1e-9, "{r}");
    }
}
