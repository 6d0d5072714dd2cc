//! Kernel masses, interface scale, kernel averages and the nonlocal source.
//!
//! Cell-to-cell interactions use the kernel sampled at cell centers (the
//! angular integral is kept exact in radial mode). Interface-to-cell
//! interactions and smoothed sources integrate the kernel exactly over each
//! cell, splitting at the support edges.

use rayon::prelude::*;

use crate::fem::P1Space;
use crate::geometry::{angular_integral, neighbors_within, Geometry, LocalMesh, Mode, RingKernelTable, SurfaceQuadrature, VolumeMesh, ARC_POINTS};
use crate::kernel::{ScaledKernel, Variant};
use crate::quadrature;

/// Errors raised by the nonlocal operators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpsError {
    #[error("nonlocal mesh too coarse: h = {h} exceeds delta/4 = {limit}")]
    Resolution { h: f64, limit: f64 },
    #[error("smoothed kernel mass vanishes at interface node {0}")]
    DegenerateWeight(usize),
    #[error("average of kind {0:?} is not available at {1:?}")]
    UnsupportedAverage(Average, EvalPoint),
}

/// Integral of `K(x, y) g(y)` over the coordinate range `[lo, hi]` of the
/// nonlocal region, split at the support edges.
pub fn kernel_integral(
    kernel: &ScaledKernel,
    variant: Variant,
    geometry: &Geometry,
    x: f64,
    (lo, hi): (f64, f64),
    g: &dyn Fn(f64) -> f64,
    panels: usize,
) -> f64 {
    let support = kernel.support_radius();
    let (a, b) = (lo.max(x - support), hi.min(x + support));
    if b <= a {
        return 0.0;
    }
    match geometry.mode() {
        Mode::Interval => {
            let breaks = quadrature::breakpoints(a, b, &[x]);
            quadrature::composite(|y| kernel.at_dist(variant, (x - y).abs()) * g(y), &breaks, panels, 10)
        }
        Mode::Radial => {
            let a = a.max(0.0);
            let breaks = quadrature::breakpoints(a, b, &[x, (support - x).abs()]);
            quadrature::composite(
                |s| g(s) * s * angular_integral(kernel, variant, x, s, ARC_POINTS),
                &breaks,
                panels,
                10,
            )
        }
    }
}

/// Contribution of interface node `k` to `int_Gamma K(x, y) dS_y`.
pub fn surface_kernel(
    kernel: &ScaledKernel,
    variant: Variant,
    geometry: &Geometry,
    surface: &SurfaceQuadrature,
    x: f64,
    k: usize,
) -> f64 {
    let node = &surface.nodes[k];
    match geometry.mode() {
        Mode::Interval => node.weight * kernel.at_dist(variant, (x - node.point).abs()),
        Mode::Radial => node.point * angular_integral(kernel, variant, x, node.point, ARC_POINTS),
    }
}

/// Kernel masses and interaction tables on the nonlocal mesh.
#[derive(Debug, Clone)]
pub struct NonlocalWeights {
    pub horizon: f64,
    /// Row `i`: `(j, A_ij)` with `A_ij` the base kernel mass of cell `j` seen from center `i`.
    pub pairs: Vec<Vec<(usize, f64)>>,
    /// Row `k`: `(i, G_ki)`, the integrated kernel from interface node `k` over cell `i`.
    pub interface_cells: Vec<Vec<(usize, f64)>>,
    /// Base kernel mass at cell centers (row sums of `pairs`).
    pub cell_mass: Vec<f64>,
    /// Integrated kernel mass at cell centers.
    pub cell_smoothed_mass: Vec<f64>,
    /// Base kernel mass at interface nodes.
    pub interface_mass: Vec<f64>,
    /// Integrated kernel mass at interface nodes (row sums of `interface_cells`).
    pub interface_smoothed_mass: Vec<f64>,
    pub cell_measures: Vec<f64>,
}

/// Computes all kernel masses and interaction tables; requires `h <= delta/4`.
pub fn compute_weights(
    geometry: &Geometry,
    mesh: &VolumeMesh,
    surface: &SurfaceQuadrature,
    kernel: &ScaledKernel,
) -> Result<NonlocalWeights, OpsError> {
    let delta = kernel.horizon();
    let limit = delta / 4.0;
    if mesh.h > limit * (1.0 + 1e-9) {
        return Err(OpsError::Resolution { h: mesh.h, limit });
    }
    let support = kernel.support_radius();
    let range = (mesh.cells[0].lo, mesh.cells[mesh.len() - 1].hi);
    let pairs: Vec<Vec<(usize, f64)>> = match geometry.mode() {
        Mode::Interval => (0..mesh.len())
            .into_par_iter()
            .map(|i| {
                let xi = mesh.cells[i].center;
                neighbors_within(mesh, xi, support)
                    .into_iter()
                    .map(|j| {
                        let c = &mesh.cells[j];
                        (j, kernel.at_dist(Variant::Base, (xi - c.center).abs()) * c.measure)
                    })
                    .collect()
            })
            .collect(),
        Mode::Radial => {
            let table = RingKernelTable::new(kernel, Variant::Base, mesh);
            table
                .rows
                .into_iter()
                .map(|row| row.into_iter().map(|(j, v)| (j, v * (mesh.cells[j].hi - mesh.cells[j].lo))).collect())
                .collect()
        }
    };
    let cell_mass = pairs.iter().map(|row| row.iter().map(|e| e.1).sum()).collect();
    let cell_smoothed_mass = mesh
        .cells
        .par_iter()
        .map(|c| kernel_integral(kernel, Variant::Integrated, geometry, c.center, range, &|_| 1.0, 4))
        .collect();
    let interface_cells: Vec<Vec<(usize, f64)>> = surface
        .nodes
        .iter()
        .map(|node| {
            neighbors_within(mesh, node.point, support + mesh.h)
                .into_par_iter()
                .map(|i| {
                    let c = &mesh.cells[i];
                    (i, kernel_integral(kernel, Variant::Integrated, geometry, node.point, (c.lo, c.hi), &|_| 1.0, 1))
                })
                .filter(|e| e.1 != 0.0)
                .collect()
        })
        .collect();
    let interface_smoothed_mass: Vec<f64> =
        interface_cells.iter().map(|row| row.iter().map(|e| e.1).sum()).collect();
    if let Some(k) = interface_smoothed_mass.iter().position(|w| !(*w > 0.0)) {
        return Err(OpsError::DegenerateWeight(k));
    }
    let interface_mass = surface
        .nodes
        .iter()
        .map(|node| kernel_integral(kernel, Variant::Base, geometry, node.point, range, &|_| 1.0, 4))
        .collect();
    Ok(NonlocalWeights {
        horizon: delta,
        pairs,
        interface_cells,
        cell_mass,
        cell_smoothed_mass,
        interface_mass,
        interface_smoothed_mass,
        cell_measures: mesh.cells.iter().map(|c| c.measure).collect(),
    })
}

/// Interface scale factor at each interface node.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceScale {
    pub values: Vec<f64>,
    pub horizon: f64,
}

/// `2 delta^2 / wbar(x) * int_Gamma Rbarbar(x, y) dS_y` at each interface node.
pub fn compute_interface_scale(
    geometry: &Geometry,
    surface: &SurfaceQuadrature,
    weights: &NonlocalWeights,
    kernel: &ScaledKernel,
) -> Result<InterfaceScale, OpsError> {
    let delta = kernel.horizon();
    let values = surface
        .nodes
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let wbar = weights.interface_smoothed_mass[k];
            if !(wbar > 0.0) {
                return Err(OpsError::DegenerateWeight(k));
            }
            let integral: f64 = (0..surface.len())
                .map(|l| surface_kernel(kernel, Variant::TwiceIntegrated, geometry, surface, node.point, l))
                .sum();
            Ok(2.0 * delta * delta / wbar * integral)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InterfaceScale { values, horizon: delta })
}

/// Kernel used for an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Average {
    /// Base kernel, normalized by the base mass.
    Base,
    /// Integrated kernel, normalized by the smoothed mass.
    Smoothed,
}

/// Where an average is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPoint {
    Cell(usize),
    Interface(usize),
}

/// Kernel-weighted average of cell values, using the same tables as the
/// coupled system: base averages at cell centers, smoothed averages at
/// interface nodes.
pub fn kernel_average(weights: &NonlocalWeights, u: &[f64], at: EvalPoint, kind: Average) -> Result<f64, OpsError> {
    let (row, mass) = match (kind, at) {
        (Average::Base, EvalPoint::Cell(i)) => (&weights.pairs[i], weights.cell_mass[i]),
        (Average::Smoothed, EvalPoint::Interface(k)) => {
            (&weights.interface_cells[k], weights.interface_smoothed_mass[k])
        }
        _ => return Err(OpsError::UnsupportedAverage(kind, at)),
    };
    Ok(row.iter().map(|&(j, v)| v * u[j]).sum::<f64>() / mass)
}

/// Constant added to the nonlocal source to enforce discrete compatibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityShift {
    pub value: f64,
}

/// Shift `-(sum of local load + sum |c_i| F_i) / |nonlocal region|` from the discrete quantities.
pub fn compute_shift(local_load: &[f64], smoothed: &[f64], cell_measures: &[f64]) -> CompatibilityShift {
    let total: f64 = local_load.iter().sum::<f64>()
        + smoothed.iter().zip(cell_measures).map(|(f, m)| f * m).sum::<f64>();
    let measure: f64 = cell_measures.iter().sum();
    CompatibilityShift { value: -total / measure }
}

/// Source data for the coupled system.
#[derive(Debug, Clone)]
pub struct SourceData {
    /// `int f phi_i` on the local mesh.
    pub local_load: Vec<f64>,
    /// `f` at local mesh nodes.
    pub local_samples: Vec<f64>,
    /// `int_NL Rbar(x_i, y) f(y) dy` at cell centers.
    pub smoothed: Vec<f64>,
    pub shift: CompatibilityShift,
    /// Smoothed source plus shift.
    pub nonlocal: Vec<f64>,
}

impl SourceData {
    /// Discrete compatibility sum; zero up to rounding by construction.
    pub fn compatibility_residual(&self, cell_measures: &[f64]) -> f64 {
        self.local_load.iter().sum::<f64>() + self.nonlocal.iter().zip(cell_measures).map(|(f, m)| f * m).sum::<f64>()
    }
}

/// Smoothed source `int_NL Rbar(x_i, y) f(y) dy` at every cell center.
pub fn smoothed_source(geometry: &Geometry, mesh: &VolumeMesh, kernel: &ScaledKernel, f: &(dyn Fn(f64) -> f64 + Sync)) -> Vec<f64> {
    let range = (mesh.cells[0].lo, mesh.cells[mesh.len() - 1].hi);
    mesh.cells
        .par_iter()
        .map(|c| kernel_integral(kernel, Variant::Integrated, geometry, c.center, range, f, 4))
        .collect()
}

/// Assembles local load, smoothed nonlocal source and the compatibility shift.
pub fn assemble_source(
    geometry: &Geometry,
    local: &LocalMesh,
    mesh: &VolumeMesh,
    kernel: &ScaledKernel,
    f: &(dyn Fn(f64) -> f64 + Sync),
) -> SourceData {
    let space = P1Space::new(geometry, &local.nodes, &local.elements);
    let local_load = space.load(f);
    let local_samples = local.nodes.iter().map(|&x| f(x)).collect();
    let smoothed = smoothed_source(geometry, mesh, kernel, f);
    let measures: Vec<f64> = mesh.cells.iter().map(|c| c.measure).collect();
    let shift = compute_shift(&local_load, &smoothed, &measures);
    let nonlocal = smoothed.iter().map(|v| v + shift.value).collect();
    SourceData { local_load, local_samples, smoothed, shift, nonlocal }
}
