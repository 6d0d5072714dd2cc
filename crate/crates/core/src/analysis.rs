//! Error norms, truncation evaluators, rate fitting and convergence studies.
//!
//! Truncation terms are evaluated with dense kink-aware Gauss rules that do
//! not depend on the solver meshes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::assembly::{
    assemble_operator, bilinear_b, bilinear_b_hat, energy, nl_recovery_residual, AssemblyError,
    CoupledSolution, Discretization, Factorized, ProblemSpec, SolverError, SolverMethod,
};
use crate::geometry::{local_mesh, volume_mesh, Geometry, Mode, Region, SurfaceQuadrature};
use crate::kernel::{KernelError, KernelProfile, ScaledKernel, Variant};
use crate::nonlocal_ops::{assemble_source, SourceData};
use crate::quadrature;
use crate::reference::{ManufacturedSolution, ReferenceError};

/// Errors raised by analysis drivers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
}

/// Piecewise exact solution of the transmission problem.
pub trait ExactSolution: Sync {
    fn value_in(&self, region: Region, x: f64) -> f64;
    fn derivative_in(&self, region: Region, x: f64) -> f64;
    /// `-div(coeff grad u)` of the piece belonging to `region`.
    fn source_in(&self, region: Region, x: f64) -> f64;
    fn coeff_nonlocal(&self) -> f64;
}

impl ExactSolution for ManufacturedSolution {
    fn value_in(&self, region: Region, x: f64) -> f64 {
        ManufacturedSolution::value_in(self, region, x)
    }
    fn derivative_in(&self, region: Region, x: f64) -> f64 {
        ManufacturedSolution::derivative_in(self, region, x)
    }
    fn source_in(&self, region: Region, x: f64) -> f64 {
        ManufacturedSolution::source_in(self, region, x)
    }
    fn coeff_nonlocal(&self) -> f64 {
        self.coeff_nonlocal
    }
}

/// Normal derivative from the nonlocal side at every interface node.
fn inner_normal_derivatives(exact: &dyn ExactSolution, surface: &SurfaceQuadrature) -> Vec<f64> {
    surface.nodes.iter().map(|n| n.normal * exact.derivative_in(Region::Nonlocal, n.point)).collect()
}

/// Broken error norms of a coupled solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub h1_local: f64,
    pub h1_nonlocal: f64,
    pub l2_interface: f64,
    pub combined: f64,
}

impl ErrorReport {
    pub fn new(h1_local: f64, h1_nonlocal: f64, l2_interface: f64, horizon: f64) -> Self {
        let combined = (h1_local.powi(2) + h1_nonlocal.powi(2) + horizon * l2_interface.powi(2)).sqrt();
        Self { h1_local, h1_nonlocal, l2_interface, combined }
    }
}

/// Recovered gradient on the uniform nonlocal cells: central differences,
/// second-order one-sided at interface-adjacent cells, mirror symmetry at the
/// disk center.
pub fn recovered_gradient(disc: &Discretization, u: &[f64]) -> Vec<f64> {
    let cells = &disc.mesh.cells;
    let n = cells.len();
    let h = cells[0].hi - cells[0].lo;
    let center_start = disc.geometry.mode() == Mode::Radial;
    (0..n)
        .map(|i| {
            if n == 1 {
                0.0
            } else if i == 0 {
                if center_start {
                    (u[1] - u[0]) / (2.0 * h)
                } else if n > 2 {
                    (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
                } else {
                    (u[1] - u[0]) / h
                }
            } else if i == n - 1 {
                if n > 2 {
                    (3.0 * u[i] - 4.0 * u[i - 1] + u[i - 2]) / (2.0 * h)
                } else {
                    (u[i] - u[i - 1]) / h
                }
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

/// Broken `H1` and interface errors of `solution` against `exact`.
pub fn error_report(disc: &Discretization, solution: &CoupledSolution, exact: &dyn ExactSolution) -> ErrorReport {
    let (l2, semi) = disc.space().error_sq(
        &solution.u_local,
        &|x| exact.value_in(Region::Local, x),
        &|x| exact.derivative_in(Region::Local, x),
    );
    let grad = recovered_gradient(disc, &solution.u_nonlocal);
    let nonlocal_sq: f64 = disc
        .mesh
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let dv = exact.value_in(Region::Nonlocal, c.center) - solution.u_nonlocal[i];
            let dg = exact.derivative_in(Region::Nonlocal, c.center) - grad[i];
            c.measure * (dv * dv + dg * dg)
        })
        .sum();
    let dn = inner_normal_derivatives(exact, &disc.surface);
    let interface_sq: f64 =
        disc.surface.nodes.iter().enumerate().map(|(k, n)| n.weight * (dn[k] - solution.u_interface[k]).powi(2)).sum();
    ErrorReport::new((l2 + semi).sqrt(), nonlocal_sq.sqrt(), interface_sq.sqrt(), disc.horizon())
}

/// Dense kink-aware quadrature used by the truncation evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseRule {
    /// Panels per smooth radial or axial segment.
    pub panels: usize,
    /// Gauss points per panel.
    pub points: usize,
    /// Panels on the angular support arc.
    pub angular_panels: usize,
    /// Gauss points per angular panel.
    pub angular_points: usize,
}

impl Default for DenseRule {
    fn default() -> Self {
        Self { panels: 32, points: 16, angular_panels: 64, angular_points: 32 }
    }
}

impl DenseRule {
    /// Cheaper rule for volume sweeps in radial mode.
    pub fn coarse() -> Self {
        Self { panels: 8, points: 16, angular_panels: 16, angular_points: 16 }
    }

    /// `int_0^{2 pi} K(|x - y|) d theta` for `|x| = r`, `|y| = s`.
    pub fn ring(&self, kernel: &ScaledKernel, variant: Variant, r: f64, s: f64) -> f64 {
        let support = kernel.support_radius();
        if (r - s).abs() >= support {
            return 0.0;
        }
        if r == 0.0 || s == 0.0 {
            return 2.0 * PI * kernel.at_dist(variant, r.max(s));
        }
        let c = (r * r + s * s - support * support) / (2.0 * r * s);
        let arc = if c <= -1.0 { PI } else { c.min(1.0).acos() };
        let (d2, rs4) = ((r - s) * (r - s), 4.0 * r * s);
        2.0 * quadrature::composite(
            |t| {
                let half = (0.5 * t).sin();
                kernel.at_sq_dist(variant, d2 + rs4 * half * half)
            },
            &[0.0, arc],
            self.angular_panels,
            self.angular_points,
        )
    }

    /// `int_NL K(x, y) g(y) dy` with breaks at every kink of the integrand.
    pub fn volume(&self, kernel: &ScaledKernel, variant: Variant, geometry: &Geometry, x: f64, g: &dyn Fn(f64) -> f64) -> f64 {
        let support = kernel.support_radius();
        let a = geometry.interface();
        match geometry.mode() {
            Mode::Interval => {
                let (lo, hi) = ((-a).max(x - support), a.min(x + support));
                if hi <= lo {
                    return 0.0;
                }
                let breaks = quadrature::breakpoints(lo, hi, &[x]);
                quadrature::composite(|y| kernel.at_dist(variant, (x - y).abs()) * g(y), &breaks, self.panels, self.points)
            }
            Mode::Radial => {
                let (lo, hi) = ((x - support).max(0.0), (x + support).min(a));
                if hi <= lo {
                    return 0.0;
                }
                let breaks = quadrature::breakpoints(lo, hi, &[x, (support - x).abs()]);
                quadrature::composite(|s| s * g(s) * self.ring(kernel, variant, x, s), &breaks, self.panels, self.points)
            }
        }
    }

    /// `int_Gamma K(x, y) q(y) dS_y` for `q` given at interface nodes.
    pub fn surface(&self, kernel: &ScaledKernel, variant: Variant, geometry: &Geometry, surface: &SurfaceQuadrature, x: f64, q: &[f64]) -> f64 {
        surface
            .nodes
            .iter()
            .zip(q)
            .map(|(n, v)| {
                let k = match geometry.mode() {
                    Mode::Interval => n.weight * kernel.at_dist(variant, (x - n.point).abs()),
                    Mode::Radial => n.point * self.ring(kernel, variant, x, n.point),
                };
                k * v
            })
            .sum()
    }

    /// `int_NL g` with breaks at `interior`.
    fn region_integral(&self, geometry: &Geometry, interior: &[f64], g: &dyn Fn(f64) -> f64) -> f64 {
        geometry
            .components(Region::Nonlocal)
            .into_iter()
            .map(|(lo, hi)| {
                let breaks = quadrature::breakpoints(lo, hi, interior);
                quadrature::composite(|x| g(x) * geometry.density(x), &breaks, self.panels.min(8), self.points)
            })
            .sum()
    }
}

/// Interface truncation data at each interface node.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTruncation {
    pub values: Vec<f64>,
    /// Dense smoothed kernel mass.
    pub smoothed_mass: Vec<f64>,
    /// Dense interface scale.
    pub scale: Vec<f64>,
    /// `L2(Gamma)` norm of `values`.
    pub norm: f64,
}

/// `r = -c (u - smoothed average of u) + c * scale * du/dn` at each interface node.
pub fn truncation_interface(
    exact: &dyn ExactSolution,
    kernel: &ScaledKernel,
    geometry: &Geometry,
    surface: &SurfaceQuadrature,
    rule: &DenseRule,
) -> InterfaceTruncation {
    let delta = kernel.horizon();
    let c = exact.coeff_nonlocal();
    let dn = inner_normal_derivatives(exact, surface);
    let u = |y: f64| exact.value_in(Region::Nonlocal, y);
    let ones = vec![1.0; surface.len()];
    let mut out = InterfaceTruncation { values: vec![], smoothed_mass: vec![], scale: vec![], norm: 0.0 };
    for (k, node) in surface.nodes.iter().enumerate() {
        let mass = rule.volume(kernel, Variant::Integrated, geometry, node.point, &|_| 1.0);
        let avg = rule.volume(kernel, Variant::Integrated, geometry, node.point, &u) / mass;
        let twice = rule.surface(kernel, Variant::TwiceIntegrated, geometry, surface, node.point, &ones);
        let scale = 2.0 * delta * delta / mass * twice;
        let r = -c * (u(node.point) - avg) + c * scale * dn[k];
        out.norm += node.weight * r * r;
        out.values.push(r);
        out.smoothed_mass.push(mass);
        out.scale.push(scale);
    }
    out.norm = out.norm.sqrt();
    out
}

/// Dense evaluator of the two nonlocal truncation pieces (without the coefficient factor).
pub struct NonlocalTruncation<'a> {
    exact: &'a dyn ExactSolution,
    kernel: &'a ScaledKernel,
    geometry: &'a Geometry,
    surface: &'a SurfaceQuadrature,
    rule: DenseRule,
    dn: Vec<f64>,
    /// `(2 wbar - 1) / wbar * du/dn` at interface nodes.
    boundary_weight: Vec<f64>,
}

impl<'a> NonlocalTruncation<'a> {
    pub fn new(exact: &'a dyn ExactSolution, kernel: &'a ScaledKernel, geometry: &'a Geometry, surface: &'a SurfaceQuadrature, rule: DenseRule) -> Self {
        let dn = inner_normal_derivatives(exact, surface);
        let boundary_weight = surface
            .nodes
            .iter()
            .zip(&dn)
            .map(|(n, d)| {
                let fine = DenseRule::default();
                let w = fine.volume(kernel, Variant::Integrated, geometry, n.point, &|_| 1.0);
                (2.0 * w - 1.0) / w * d
            })
            .collect();
        Self { exact, kernel, geometry, surface, rule, dn, boundary_weight }
    }

    /// Point-integral residual: `(1/d^2) int K (u(x) - u(y)) - 2 int_Gamma Kbar du/dn - int Kbar f / c`.
    pub fn first(&self, x: f64) -> f64 {
        let (k, g, r) = (self.kernel, self.geometry, &self.rule);
        let delta2 = k.horizon() * k.horizon();
        let ex = self.exact;
        let ux = ex.value_in(Region::Nonlocal, x);
        let diff = r.volume(k, Variant::Base, g, x, &|y| ux - ex.value_in(Region::Nonlocal, y)) / delta2;
        let flux = 2.0 * r.surface(k, Variant::Integrated, g, self.surface, x, &self.dn);
        let c = ex.coeff_nonlocal();
        let src = r.volume(k, Variant::Integrated, g, x, &|y| ex.source_in(Region::Nonlocal, y) / c);
        diff - flux - src
    }

    /// Half-integral defect: `int_Gamma Kbar du/dn (2 wbar - 1) / wbar`.
    pub fn second(&self, x: f64) -> f64 {
        DenseRule::default().surface(self.kernel, Variant::Integrated, self.geometry, self.surface, x, &self.boundary_weight)
    }

    /// Interior kink locations of both pieces.
    fn layer_breaks(&self) -> Vec<f64> {
        let edge = self.geometry.interface() - self.kernel.support_radius();
        match self.geometry.mode() {
            Mode::Interval => vec![-edge, edge],
            Mode::Radial => vec![edge, self.kernel.support_radius()],
        }
    }

    /// `L2(NL)` norms of both pieces.
    pub fn norms(&self) -> (f64, f64) {
        let breaks = self.layer_breaks();
        let first = self.rule.region_integral(self.geometry, &breaks, &|x| self.first(x).powi(2)).sqrt();
        let fine = DenseRule::default();
        let second = fine.region_integral(self.geometry, &breaks, &|x| self.second(x).powi(2)).sqrt();
        (first, second)
    }
}

/// `L2(NL)` norms of both nonlocal truncation pieces.
pub fn truncation_nonlocal(
    exact: &dyn ExactSolution,
    kernel: &ScaledKernel,
    geometry: &Geometry,
    surface: &SurfaceQuadrature,
    rule: DenseRule,
) -> (f64, f64) {
    NonlocalTruncation::new(exact, kernel, geometry, surface, rule).norms()
}

/// Largest `|2 wbar - 1|` over interface nodes.
pub fn half_integral_check(disc: &Discretization) -> f64 {
    disc.weights.interface_smoothed_mass.iter().map(|w| (2.0 * w - 1.0).abs()).fold(0.0, f64::max)
}

/// Interface and nonlocal truncation norms together with the half-integral defect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationReport {
    pub r_interface: f64,
    pub r_nonlocal_first: f64,
    pub r_nonlocal_second: f64,
    pub half_integral_max: f64,
}

/// All truncation measurements for one discretization.
pub fn truncation_report(disc: &Discretization, exact: &dyn ExactSolution) -> TruncationReport {
    let rule = match disc.geometry.mode() {
        Mode::Interval => DenseRule::default(),
        Mode::Radial => DenseRule::coarse(),
    };
    let interface = truncation_interface(exact, &disc.kernel, &disc.geometry, &disc.surface, &DenseRule::default());
    let (first, second) = truncation_nonlocal(exact, &disc.kernel, &disc.geometry, &disc.surface, rule);
    TruncationReport {
        r_interface: interface.norm,
        r_nonlocal_first: first,
        r_nonlocal_second: second,
        half_integral_max: half_integral_check(disc),
    }
}

/// Least-squares fit of `log y = slope * log x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in natural-log space.
    pub residual: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci95: f64,
}

impl Fit {
    /// Residual above which a fit is considered preasymptotic.
    pub const PREASYMPTOTIC: f64 = 0.1;

    pub fn preasymptotic(&self) -> bool {
        self.residual > Self::PREASYMPTOTIC
    }
}

/// Two-sided 97.5% Student quantiles for 1..=10 degrees of freedom.
const T975: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];

/// Fits a log-log slope; needs at least three positive finite points.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<Fit> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (*a, *b)).collect();
    if pts.len() < 3 || pts.iter().any(|(a, b)| !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite())) {
        return None;
    }
    let n = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let dof = pts.len() - 2;
    let t = T975[(dof - 1).min(T975.len() - 1)];
    let ci95 = t * (sse / dof as f64 / sxx).sqrt();
    Some(Fit { slope, intercept, residual: (sse / n).sqrt(), ci95 })
}

/// Mesh sizes as fractions of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshRule {
    pub local_ratio: f64,
    pub nonlocal_ratio: f64,
}

impl Default for MeshRule {
    fn default() -> Self {
        Self { local_ratio: 8.0, nonlocal_ratio: 8.0 }
    }
}

impl MeshRule {
    pub fn sizes(&self, delta: f64) -> (f64, f64) {
        (delta / self.local_ratio, delta / self.nonlocal_ratio)
    }
}

/// Inputs of a convergence study.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub spec: ProblemSpec,
    pub case: ManufacturedSolution,
    pub profile: KernelProfile,
    pub deltas: Vec<f64>,
    pub mesh: MeshRule,
    pub method: SolverMethod,
}

/// One horizon of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub delta: f64,
    pub h_local: f64,
    pub h_nonlocal: f64,
    pub errors: ErrorReport,
    pub truncation: TruncationReport,
    /// Recovery identity residual relative to `max |u_NL|`.
    pub recovery: f64,
    /// Largest relative mismatch of the diagonal energy identities on the solution.
    pub identity: f64,
    pub unknowns: usize,
}

/// Named metric columns of a study.
pub const METRICS: [&str; 7] = ["h1_L", "h1_NL", "l2_gamma", "combined", "r_gamma", "r_nl2", "half_integral"];

impl StudyRow {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "h1_L" => self.errors.h1_local,
            "h1_NL" => self.errors.h1_nonlocal,
            "l2_gamma" => self.errors.l2_interface,
            "combined" => self.errors.combined,
            "r_gamma" => self.truncation.r_interface,
            "r_nl1" => self.truncation.r_nonlocal_first,
            "r_nl2" => self.truncation.r_nonlocal_second,
            "half_integral" => self.truncation.half_integral_max,
            _ => f64::NAN,
        }
    }
}

/// Rows ordered as the input horizons, with fitted slopes per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<StudyRow>,
    pub slopes: Vec<(&'static str, Option<Fit>)>,
}

impl RateTable {
    pub fn from_rows(rows: Vec<StudyRow>) -> Self {
        let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
        let slopes = METRICS
            .iter()
            .map(|&m| (m, fit_slope(&deltas, &rows.iter().map(|r| r.metric(m)).collect::<Vec<_>>())))
            .collect();
        Self { rows, slopes }
    }

    pub fn slope(&self, metric: &str) -> Option<Fit> {
        self.slopes.iter().find(|(m, _)| *m == metric).and_then(|(_, f)| *f)
    }
}

/// Study failure carrying the rows completed before the failing horizon.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("study failed at delta = {delta}: {source}")]
pub struct StudyError {
    pub delta: f64,
    pub source: AnalysisError,
    pub partial: Box<RateTable>,
}

/// Builds the discretization for one horizon of a case.
pub fn discretize(case: &ManufacturedSolution, profile: &KernelProfile, delta: f64, mesh: MeshRule) -> Result<Discretization, AnalysisError> {
    let geometry = case.geometry(delta)?;
    let kernel = ScaledKernel::new(profile.clone(), delta, geometry.dim())?;
    let (hl, hn) = mesh.sizes(delta);
    Ok(Discretization::new(geometry, kernel, hl, hn)?)
}

/// Source data of a case on a discretization.
pub fn case_source(disc: &Discretization, case: &ManufacturedSolution) -> SourceData {
    assemble_source(&disc.geometry, &disc.local, &disc.mesh, &disc.kernel, &|x| case.source(x))
}

/// Relative mismatch of both diagonal energy identities on a solution.
pub fn identity_mismatch(spec: &ProblemSpec, disc: &Discretization, solution: &CoupledSolution) -> f64 {
    let (ul, un) = (&solution.u_local, &solution.u_nonlocal);
    let b = bilinear_b(spec, disc, (ul, un), (ul, un));
    let e = energy(spec, disc, ul, un, &disc.interface_values(ul, un)).total();
    let t = solution.triple();
    let bh = bilinear_b_hat(spec, disc, &t, &t);
    let eh = energy(spec, disc, &t.local, &t.nonlocal, &t.interface).total();
    let rel = |p: f64, q: f64| if q == 0.0 { p.abs() } else { (p - q).abs() / q.abs() };
    rel(b, e).max(rel(bh, eh))
}

/// Solves one horizon of a study.
pub fn study_point(setup: &StudySetup, delta: f64) -> Result<StudyRow, AnalysisError> {
    let disc = discretize(&setup.case, &setup.profile, delta, setup.mesh)?;
    let source = case_source(&disc, &setup.case);
    let solver = Factorized::new(&setup.spec, &disc, setup.method)?;
    let solution = solver.solve_source(&source)?;
    let errors = error_report(&disc, &solution, &setup.case);
    let truncation = truncation_report(&disc, &setup.case);
    let scale = solution.u_nonlocal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let recovery = nl_recovery_residual(&setup.spec, &disc, &solution, &source) / scale.max(f64::MIN_POSITIVE);
    let (hl, hn) = setup.mesh.sizes(delta);
    Ok(StudyRow {
        delta,
        h_local: hl,
        h_nonlocal: hn,
        errors,
        truncation,
        recovery,
        identity: identity_mismatch(&setup.spec, &disc, &solution),
        unknowns: disc.layout().size(),
    })
}

/// Runs every horizon (in parallel) and fits slopes.
pub fn convergence_study(setup: &StudySetup) -> Result<RateTable, StudyError> {
    let results: Vec<Result<StudyRow, AnalysisError>> = setup.deltas.par_iter().map(|&d| study_point(setup, d)).collect();
    let mut rows = Vec::new();
    for (res, &delta) in results.into_iter().zip(&setup.deltas) {
        match res {
            Ok(row) => rows.push(row),
            Err(source) => return Err(StudyError { delta, source, partial: Box::new(RateTable::from_rows(rows)) }),
        }
    }
    Ok(RateTable::from_rows(rows))
}

/// Extremes of the sampled coercivity and continuity ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivitySample {
    /// `min B[w; w] / |w|^2`.
    pub min_ratio: f64,
    /// `max B[w; w] / |w|^2`.
    pub max_ratio: f64,
    /// `max |B[u; v]| delta^2 / (|u| |v|)`.
    pub max_continuity: f64,
}

/// `|w_L|^2_H1 + |w_NL|^2_L2`.
pub fn pair_norm_sq(disc: &Discretization, local: &[f64], nonlocal: &[f64]) -> f64 {
    let (l2, semi) = disc.space().error_sq(local, &|_| 0.0, &|_| 0.0);
    l2 + semi + disc.weights.cell_measures.iter().zip(nonlocal).map(|(m, v)| m * v * v).sum::<f64>()
}

/// Random pair with unit Gaussian entries, shifted to zero mean.
pub fn random_zero_mean_pair(disc: &Discretization, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let layout = disc.layout();
    let mut ul: Vec<f64> = (0..layout.local).map(|_| rng.sample(StandardNormal)).collect();
    let mut un: Vec<f64> = (0..layout.nonlocal).map(|_| rng.sample(StandardNormal)).collect();
    let total = disc.local_mass.iter().sum::<f64>() + disc.weights.cell_measures.iter().sum::<f64>();
    let shift = disc.mean_functional(&ul, &un) / total;
    ul.iter_mut().chain(un.iter_mut()).for_each(|v| *v -= shift);
    (ul, un)
}

/// Samples coercivity and continuity ratios of the reduced form.
pub fn coercivity_sample(spec: &ProblemSpec, disc: &Discretization, samples: usize, seed: u64) -> CoercivitySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta2 = disc.horizon() * disc.horizon();
    let mut out = CoercivitySample { min_ratio: f64::INFINITY, max_ratio: 0.0, max_continuity: 0.0 };
    for _ in 0..samples.max(1) {
        let (ul, un) = random_zero_mean_pair(disc, &mut rng);
        let (vl, vn) = random_zero_mean_pair(disc, &mut rng);
        let nu = pair_norm_sq(disc, &ul, &un);
        let nv = pair_norm_sq(disc, &vl, &vn);
        let ratio = bilinear_b(spec, disc, (&ul, &un), (&ul, &un)) / nu;
        out.min_ratio = out.min_ratio.min(ratio);
        out.max_ratio = out.max_ratio.max(ratio);
        let cont = bilinear_b(spec, disc, (&ul, &un), (&vl, &vn)).abs() * delta2 / (nu * nv).sqrt();
        out.max_continuity = out.max_continuity.max(cont);
    }
    out
}

/// Per-group largest mismatch between the operator applied to the exact
/// data and the independently computed truncation terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSystemMismatch {
    pub local: f64,
    pub nonlocal: f64,
    pub interface: f64,
}

impl ErrorSystemMismatch {
    pub fn max(&self) -> f64 {
        self.local.max(self.nonlocal).max(self.interface)
    }
}

/// Applies the assembled rows to the error `exact - solution` and compares
/// each group with its truncation term: nonlocal rows with `r_NL - shift`,
/// interface rows with `r_Gamma`, local rows with zero.
pub fn error_system_residual(
    spec: &ProblemSpec,
    disc: &Discretization,
    solution: &CoupledSolution,
    exact: &dyn ExactSolution,
    source: &SourceData,
    rule: DenseRule,
) -> Result<ErrorSystemMismatch, AnalysisError> {
    let layout = disc.layout();
    let matrix = assemble_operator(spec, disc);
    let dn = inner_normal_derivatives(exact, &disc.surface);
    let mut err = vec![0.0; layout.size()];
    for (i, x) in disc.local.nodes.iter().enumerate() {
        err[i] = exact.value_in(Region::Local, *x) - solution.u_local[i];
    }
    for (i, c) in disc.mesh.cells.iter().enumerate() {
        err[layout.nonlocal_offset() + i] = exact.value_in(Region::Nonlocal, c.center) - solution.u_nonlocal[i];
    }
    for k in 0..layout.interface {
        err[layout.interface_offset() + k] = dn[k] - solution.u_interface[k];
    }
    err[layout.multiplier_index()] = -solution.multiplier;
    // The solution satisfies its rows, so these equal the rows applied to the exact data minus the data.
    let rows = matrix.matvec(&err);
    let c = spec.coeff_nonlocal;
    let nl = NonlocalTruncation::new(exact, &disc.kernel, &disc.geometry, &disc.surface, rule);
    let nonlocal = disc
        .mesh
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let target = c * (nl.first(cell.center) + nl.second(cell.center)) - source.shift.value;
            (rows[layout.nonlocal_offset() + i] - target).abs()
        })
        .reduce(|| 0.0, f64::max);
    let gamma = truncation_interface(exact, &disc.kernel, &disc.geometry, &disc.surface, &DenseRule::default());
    let interface = (0..layout.interface)
        .map(|k| (rows[layout.interface_offset() + k] - gamma.values[k]).abs())
        .fold(0.0, f64::max);
    let local = rows[..layout.local].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ErrorSystemMismatch { local, nonlocal, interface })
}

/// `sum_k (a_k cos(k pi x / L) + b_k sin(k pi x / L))` on `(-L, L)`; zero mean by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimited {
    pub half_length: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl BandLimited {
    /// Random coefficients, standard normal scaled by `1/k`.
    pub fn random(rng: &mut impl Rng, modes: usize, half_length: f64) -> Self {
        let mut draw = |k: usize| rng.sample::<f64, _>(StandardNormal) / k as f64;
        let mut cos = Vec::with_capacity(modes);
        let mut sin = Vec::with_capacity(modes);
        for k in 1..=modes {
            cos.push(draw(k));
            sin.push(draw(k));
        }
        Self { half_length, cos, sin }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = PI * x / self.half_length;
        self.cos
            .iter()
            .zip(&self.sin)
            .enumerate()
            .map(|(k, (a, b))| {
                let kt = (k + 1) as f64 * t;
                a * kt.cos() + b * kt.sin()
            })
            .sum()
    }
}

/// `L2(Omega)` norm of a function.
pub fn l2_norm(geometry: &Geometry, f: &dyn Fn(f64) -> f64) -> f64 {
    [Region::Local, Region::Nonlocal].into_iter().map(|r| geometry.integrate(r, |x| f(x).powi(2), 64)).sum::<f64>().sqrt()
}

/// Compatibility shift of a source on meshes of the given sizes.
pub fn shift_for(geometry: &Geometry, kernel: &ScaledKernel, h_local: f64, h_nonlocal: f64, f: &(dyn Fn(f64) -> f64 + Sync)) -> Result<f64, AnalysisError> {
    let local = local_mesh(geometry, h_local).map_err(AssemblyError::from)?;
    let mesh = volume_mesh(geometry, Region::Nonlocal, h_nonlocal).map_err(AssemblyError::from)?;
    Ok(assemble_source(geometry, &local, &mesh, kernel, f).shift.value)
}

/// `max(1, max wbar) sqrt(|Omega|) / |NL|`, a bound on `|shift| / |f|_L2`.
pub fn shift_bound_constant(disc: &Discretization) -> f64 {
    let wmax = disc.weights.cell_smoothed_mass.iter().fold(1.0f64, |m, w| m.max(*w));
    wmax * disc.geometry.total_measure().sqrt() / disc.geometry.measure(Region::Nonlocal)
}

/// Solution norms entering the stability estimate.
pub fn stability_ratio(disc: &Discretization, solution: &CoupledSolution, f_norm: f64) -> f64 {
    let (l2, semi) = disc.space().error_sq(&solution.u_local, &|_| 0.0, &|_| 0.0);
    let grad = recovered_gradient(disc, &solution.u_nonlocal);
    let nonlocal: f64 = disc
        .weights
        .cell_measures
        .iter()
        .zip(solution.u_nonlocal.iter().zip(&grad))
        .map(|(m, (u, g))| m * (u * u + g * g))
        .sum();
    let interface: f64 = disc.surface.nodes.iter().zip(&solution.u_interface).map(|(n, v)| n.weight * v * v).sum();
    (l2 + semi + nonlocal + disc.horizon() * interface) / (f_norm * f_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::solve;
    use crate::assembly::assemble_system;
    use crate::reference::manufactured_case;

    struct Affine {
        slope: f64,
        offset: f64,
    }

    impl ExactSolution for Affine {
        fn value_in(&self, _: Region, x: f64) -> f64 {
            self.offset + self.slope * x
        }
        fn derivative_in(&self, _: Region, _: f64) -> f64 {
            self.slope
        }
        fn source_in(&self, _: Region, _: f64) -> f64 {
            0.0
        }
        fn coeff_nonlocal(&self) -> f64 {
            2.0
        }
    }

    fn disc_for(case: &ManufacturedSolution, delta: f64) -> Discretization {
        discretize(case, &KernelProfile::quadratic(), delta, MeshRule::default()).unwrap()
    }

    #[test]
    fn fit_recovers_power_law() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        let f = fit_slope(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.residual < 1e-12 && !f.preasymptotic());
        assert!(fit_slope(&x[..2], &y[..2]).is_none());
        assert!(fit_slope(&x, &[1.0, 0.0, 1.0, 1.0]).is_none());
        let noisy = [1.0, 0.3, 0.5, 0.1];
        assert!(fit_slope(&x, &noisy).unwrap().preasymptotic());
    }

    #[test]
    fn constant_field_has_no_truncation() {
        for mode in [Mode::Interval, Mode::Radial] {
            let g = Geometry::new(mode, 0.5, 1.0, 0.1).unwrap();
            let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, g.dim()).unwrap();
            let s = crate::geometry::interface_quadrature(&g);
            let c = Affine { slope: 0.0, offset: 1.7 };
            let r = truncation_interface(&c, &k, &g, &s, &DenseRule::default());
            assert!(r.norm < 1e-13, "{mode:?} {}", r.norm);
            let (a, b) = truncation_nonlocal(&c, &k, &g, &s, DenseRule::coarse());
            assert!(a < 1e-12 && b < 1e-12);
        }
    }

    #[test]
    fn affine_interface_truncation_vanishes_on_flat_interface() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.1).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 1).unwrap();
        let s = crate::geometry::interface_quadrature(&g);
        let r = truncation_interface(&Affine { slope: 1.3, offset: 0.2 }, &k, &g, &s, &DenseRule::default());
        assert!(r.norm < 1e-12, "{}", r.norm);
        assert!(r.scale.iter().all(|z| (z - 35.0 * 0.1 / 64.0).abs() < 1e-12));
    }

    #[test]
    fn dense_volume_matches_adaptive_oracle() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.1).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 1).unwrap();
        for x in [0.45, 0.0, -0.33] {
            let f = |y: f64| (3.0 * y).sin() + 1.0;
            let v = DenseRule::default().volume(&k, Variant::Base, &g, x, &f);
            let oracle = quadrature::adaptive(&|y| k.at_dist(Variant::Base, (x - y).abs()) * f(y), (x - 0.2f64).max(-0.5), x.min(0.5), 1e-14)
                + quadrature::adaptive(&|y| k.at_dist(Variant::Base, (x - y).abs()) * f(y), x, (x + 0.2f64).min(0.5), 1e-14);
            assert!((v - oracle).abs() < 1e-11, "{v} {oracle}");
        }
    }

    #[test]
    fn flat_second_piece_vanishes() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let g = case.geometry(0.1).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 1).unwrap();
        let s = crate::geometry::interface_quadrature(&g);
        let (_, second) = truncation_nonlocal(&case, &k, &g, &s, DenseRule::default());
        assert!(second < 1e-8, "{second}");
    }

    #[test]
    fn error_report_of_zero_solution_matches_dense_norms() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let d = disc_for(&case, 0.1);
        let l = d.layout();
        let zero = CoupledSolution {
            u_local: vec![0.0; l.local],
            u_nonlocal: vec![0.0; l.nonlocal],
            u_interface: vec![0.0; l.interface],
            multiplier: 0.0,
            residual: 0.0,
            iterations: 0,
            constraint: 0.0,
        };
        let r = error_report(&d, &zero, &case);
        let g = d.geometry;
        let h1_local = g.integrate(Region::Local, |x| case.value(x).powi(2) + case.derivative(x).powi(2), 64).sqrt();
        let h1_nl = g
            .integrate(Region::Nonlocal, |x| case.value(x).powi(2) + case.derivative(x).powi(2), 64)
            .sqrt();
        assert!((r.h1_local - h1_local).abs() < 1e-6);
        // Cell sums are a midpoint rule: second-order agreement only.
        assert!((r.h1_nonlocal - h1_nl).abs() < 1e-3 * h1_nl);
        assert!((r.l2_interface - 2f64.sqrt() * PI).abs() < 1e-12);
        let sum = r.h1_local.powi(2) + r.h1_nonlocal.powi(2) + 0.1 * r.l2_interface.powi(2);
        assert!((r.combined.powi(2) - sum).abs() <= 1e-14 * sum);
    }

    #[test]
    fn interpolation_floor_drops_fourfold() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let mut floors = Vec::new();
        for ratio in [8.0, 16.0] {
            let d = discretize(&case, &KernelProfile::quadratic(), 0.1, MeshRule { local_ratio: ratio, nonlocal_ratio: ratio }).unwrap();
            let exact = CoupledSolution {
                u_local: d.local.nodes.iter().map(|&x| case.value_in(Region::Local, x)).collect(),
                u_nonlocal: d.mesh.cells.iter().map(|c| case.value(c.center)).collect(),
                u_interface: d.surface.nodes.iter().map(|n| n.normal * case.derivative_in(Region::Nonlocal, n.point)).collect(),
                multiplier: 0.0,
                residual: 0.0,
                iterations: 0,
                constraint: 0.0,
            };
            let r = error_report(&d, &exact, &case);
            assert!(r.l2_interface == 0.0);
            floors.push((r.h1_local, r.h1_nonlocal));
        }
        // The local semi-norm floor is first order; its square drops fourfold.
        let local = (floors[0].0 / floors[1].0).powi(2);
        let nonlocal = floors[0].1 / floors[1].1;
        assert!((3.5..4.5).contains(&local), "{local}");
        assert!(nonlocal > 3.0, "{nonlocal}");
    }

    #[test]
    fn solve_improves_with_smaller_horizon() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let err = |delta: f64| {
            let d = disc_for(&case, delta);
            let src = case_source(&d, &case);
            let sol = solve(&assemble_system(&spec, &d, &src).unwrap(), &d, SolverMethod::Direct).unwrap();
            let r = error_report(&d, &sol, &case);
            (r.h1_local.powi(2) + r.h1_nonlocal.powi(2)).sqrt()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 1.7, "{ratio}");
    }

    #[test]
    fn coercivity_sample_is_reproducible_and_positive() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let d = disc_for(&case, 0.1);
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let a = coercivity_sample(&spec, &d, 200, 7);
        let b = coercivity_sample(&spec, &d, 200, 7);
        assert_eq!(a, b);
        assert!(a.min_ratio > 0.0);
        assert_ne!(coercivity_sample(&spec, &d, 20, 8), coercivity_sample(&spec, &d, 20, 7));
    }

    #[test]
    fn random_pairs_have_zero_mean() {
        let case = manufactured_case("mcR1", 1.0, 2.0).unwrap();
        let d = disc_for(&case, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ul, un) = random_zero_mean_pair(&d, &mut rng);
        assert!(d.mean_functional(&ul, &un).abs() < 1e-12);
    }

    #[test]
    fn band_limited_sources_have_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = BandLimited::random(&mut rng, 4, 1.0);
        let v = quadrature::composite(|x| f.eval(x), &[-1.0, 1.0], 16, 12);
        assert!(v.abs() < 1e-13);
    }

    #[test]
    fn error_system_zero_case() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let d = disc_for(&case, 0.1);
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|_| 0.0);
        let sol = solve(&assemble_system(&spec, &d, &src).unwrap(), &d, SolverMethod::Direct).unwrap();
        let zero = Affine { slope: 0.0, offset: 0.0 };
        let m = error_system_residual(&spec, &d, &sol, &zero, &src, DenseRule::default()).unwrap();
        assert_eq!(m.max(), 0.0);
    }

    fn error_system_at(case: &ManufacturedSolution, ratio: f64, zeta_factor: f64) -> ErrorSystemMismatch {
        let spec = ProblemSpec::new(1.0, 2.0).unwrap();
        let mut d = discretize(case, &KernelProfile::quadratic(), 0.1, MeshRule { local_ratio: ratio, nonlocal_ratio: ratio }).unwrap();
        for z in d.scale.values.iter_mut() {
            *z *= zeta_factor;
        }
        let src = case_source(&d, case);
        let sol = solve(&assemble_system(&spec, &d, &src).unwrap(), &d, SolverMethod::Direct).unwrap();
        error_system_residual(&spec, &d, &sol, case, &src, DenseRule::coarse()).unwrap()
    }

    #[test]
    fn error_system_nonlocal_mismatch_is_second_order_in_mesh() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let coarse = error_system_at(&case, 8.0, 1.0);
        let fine = error_system_at(&case, 16.0, 1.0);
        assert!(coarse.local < 1e-9 && fine.local < 1e-9);
        let rate = (coarse.nonlocal / fine.nonlocal).log2();
        assert!((1.7..2.3).contains(&rate), "rate {rate}");
    }

    #[test]
    fn error_system_detects_corrupted_interface_scale() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let clean = error_system_at(&case, 32.0, 1.0);
        let corrupted = error_system_at(&case, 32.0, 1.01);
        assert!(clean.interface < 1e-4, "clean {clean:?}");
        assert!(corrupted.interface > 20.0 * clean.interface, "{clean:?} vs {corrupted:?}");
    }

    #[test]
    fn single_horizon_study_has_no_slope() {
        let case = manufactured_case("mc1", 1.0, 2.0).unwrap();
        let setup = StudySetup {
            spec: ProblemSpec::new(1.0, 2.0).unwrap(),
            case,
            profile: KernelProfile::quadratic(),
            deltas: vec![0.1],
            mesh: MeshRule::default(),
            method: SolverMethod::Direct,
        };
        let table = convergence_study(&setup).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.slope("combined").is_none());
    }
}
