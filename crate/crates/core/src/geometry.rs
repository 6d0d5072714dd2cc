//! Domains, meshes and interface quadrature for the two supported layouts:
//! an interval with a centered nonlocal subinterval, and a radially symmetric
//! disk with a centered nonlocal core.
//!
//! Points are scalar throughout: the coordinate `x` on the interval, the
//! radius `r` in radial mode.

use std::f64::consts::PI;

use crate::kernel::{ScaledKernel, Variant};
use crate::quadrature;

/// Errors raised while building geometries and meshes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("horizon too large: 2*delta = {support} must be below {limit} ({what})")]
    HorizonTooLarge { support: f64, limit: f64, what: &'static str },
    #[error("mesh size must be positive, got {0}")]
    InvalidMeshSize(f64),
}

/// Layout family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `(-outer, outer)` with nonlocal part `(-a, a)`.
    Interval,
    /// Disk of radius `outer` with nonlocal core of radius `a`.
    Radial,
}

/// Which side of the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Local,
    Nonlocal,
}

/// Validated domain description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    mode: Mode,
    interface: f64,
    outer: f64,
}

impl Geometry {
    /// Builds and validates a geometry for the given horizon.
    pub fn new(mode: Mode, interface: f64, outer: f64, horizon: f64) -> Result<Self, GeometryError> {
        if !(interface > 0.0) {
            return Err(GeometryError::DegenerateRegion(format!(
                "interface position must be positive, got {interface}"
            )));
        }
        if !(outer > interface) {
            return Err(GeometryError::DegenerateRegion(format!(
                "outer boundary {outer} must lie beyond the interface {interface}"
            )));
        }
        let support = 2.0 * horizon;
        let gap = outer - interface;
        if !(support < gap) {
            return Err(GeometryError::HorizonTooLarge {
                support,
                limit: gap,
                what: "distance from interface to outer boundary",
            });
        }
        if !(support < interface) {
            return Err(GeometryError::HorizonTooLarge {
                support,
                limit: interface,
                what: "inradius of the nonlocal region",
            });
        }
        Ok(Self { mode, interface, outer })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Interface position: `a` on the interval, the interface radius in radial mode.
    pub fn interface(&self) -> f64 {
        self.interface
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    /// Spatial dimension of the underlying problem.
    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Interval => 1,
            Mode::Radial => 2,
        }
    }

    /// Region containing the scalar coordinate; interface points count as nonlocal.
    pub fn region_of(&self, x: f64) -> Region {
        if x.abs() <= self.interface {
            Region::Nonlocal
        } else {
            Region::Local
        }
    }

    /// Measure density in the scalar coordinate (`1` or `2 pi r`).
    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        match self.mode {
            Mode::Interval => 1.0,
            Mode::Radial => 2.0 * PI * x,
        }
    }

    /// Measure of `[lo, hi]` in the scalar coordinate.
    pub fn segment_measure(&self, lo: f64, hi: f64) -> f64 {
        match self.mode {
            Mode::Interval => hi - lo,
            Mode::Radial => PI * (hi * hi - lo * lo),
        }
    }

    pub fn measure(&self, region: Region) -> f64 {
        let (a, o) = (self.interface, self.outer);
        match (self.mode, region) {
            (Mode::Interval, Region::Nonlocal) => 2.0 * a,
            (Mode::Interval, Region::Local) => 2.0 * (o - a),
            (Mode::Radial, Region::Nonlocal) => PI * a * a,
            (Mode::Radial, Region::Local) => PI * (o * o - a * a),
        }
    }

    pub fn total_measure(&self) -> f64 {
        self.measure(Region::Local) + self.measure(Region::Nonlocal)
    }

    /// Coordinate intervals making up a region.
    pub fn components(&self, region: Region) -> Vec<(f64, f64)> {
        let (a, o) = (self.interface, self.outer);
        match (self.mode, region) {
            (Mode::Interval, Region::Nonlocal) => vec![(-a, a)],
            (Mode::Interval, Region::Local) => vec![(-o, -a), (a, o)],
            (Mode::Radial, Region::Nonlocal) => vec![(0.0, a)],
            (Mode::Radial, Region::Local) => vec![(a, o)],
        }
    }

    /// Integral of `g` over a region in the scalar coordinate with its measure density.
    pub fn integrate(&self, region: Region, g: impl Fn(f64) -> f64, panels: usize) -> f64 {
        self.components(region)
            .into_iter()
            .map(|(lo, hi)| quadrature::composite(|x| g(x) * self.density(x), &[lo, hi], panels, 12))
            .sum()
    }
}

/// One cell of a volume mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Midpoint coordinate (midpoint radius for rings).
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub measure: f64,
}

/// Uniform cells covering one region; ordered by coordinate.
#[derive(Debug, Clone)]
pub struct VolumeMesh {
    pub region: Region,
    pub cells: Vec<Cell>,
    pub h: f64,
}

impl VolumeMesh {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.center).collect()
    }
}

/// Uniform partition of a region into cells of size at most `h`.
pub fn volume_mesh(geometry: &Geometry, region: Region, h: f64) -> Result<VolumeMesh, GeometryError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(GeometryError::InvalidMeshSize(h));
    }
    let mut cells = Vec::new();
    let mut h_used: f64 = 0.0;
    for (lo, hi) in geometry.components(region) {
        let n = ((hi - lo) / h - 1e-9).ceil().max(1.0) as usize;
        let step = (hi - lo) / n as f64;
        h_used = h_used.max(step);
        for k in 0..n {
            let a = lo + k as f64 * step;
            let b = if k + 1 == n { hi } else { lo + (k + 1) as f64 * step };
            cells.push(Cell { center: 0.5 * (a + b), lo: a, hi: b, measure: geometry.segment_measure(a, b) });
        }
    }
    Ok(VolumeMesh { region, cells, h: h_used })
}

/// Cells whose center lies strictly within `radius` of `point` (coordinate distance).
pub fn neighbors_within(mesh: &VolumeMesh, point: f64, radius: f64) -> Vec<usize> {
    let start = mesh.cells.partition_point(|c| c.center <= point - radius);
    mesh.cells[start..]
        .iter()
        .take_while(|c| c.center < point + radius)
        .enumerate()
        .filter(|(_, c)| (c.center - point).abs() < radius)
        .map(|(k, _)| start + k)
        .collect()
}

/// Continuous piecewise-linear mesh of the local region.
#[derive(Debug, Clone)]
pub struct LocalMesh {
    pub nodes: Vec<f64>,
    /// Node index pairs, ordered left to right.
    pub elements: Vec<[usize; 2]>,
    /// Node index of each interface quadrature node, in the same order.
    pub interface_nodes: Vec<usize>,
    pub h: f64,
}

/// Local mesh whose vertices include every interface point.
pub fn local_mesh(geometry: &Geometry, h: f64) -> Result<LocalMesh, GeometryError> {
    let cells = volume_mesh(geometry, Region::Local, h)?;
    let mut nodes: Vec<f64> = Vec::new();
    let mut elements = Vec::new();
    for (lo, hi) in geometry.components(Region::Local) {
        let first = nodes.len();
        nodes.push(lo);
        for c in cells.cells.iter().filter(|c| c.lo >= lo && c.hi <= hi) {
            nodes.push(c.hi);
            elements.push([nodes.len() - 2, nodes.len() - 1]);
        }
        debug_assert!(nodes.len() > first + 1);
    }
    let a = geometry.interface();
    let interface_nodes = interface_quadrature(geometry)
        .nodes
        .iter()
        .map(|s| {
            nodes
                .iter()
                .position(|&x| (x - s.point).abs() <= 1e-14 * (1.0 + a))
                .expect("interface point is a mesh vertex")
        })
        .collect();
    Ok(LocalMesh { nodes, elements, interface_nodes, h: cells.h })
}

/// Point on the interface with its weight and normal orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNode {
    pub point: f64,
    pub weight: f64,
    /// `+1` or `-1` along the scalar coordinate, pointing into the local region.
    pub normal: f64,
}

/// Interface quadrature.
#[derive(Debug, Clone)]
pub struct SurfaceQuadrature {
    pub nodes: Vec<SurfaceNode>,
}

impl SurfaceQuadrature {
    pub fn total_measure(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Two weighted points on the interval; one representative circle node in radial mode.
pub fn interface_quadrature(geometry: &Geometry) -> SurfaceQuadrature {
    let a = geometry.interface();
    let nodes = match geometry.mode() {
        Mode::Interval => vec![
            SurfaceNode { point: -a, weight: 1.0, normal: -1.0 },
            SurfaceNode { point: a, weight: 1.0, normal: 1.0 },
        ],
        Mode::Radial => vec![SurfaceNode { point: a, weight: 2.0 * PI * a, normal: 1.0 }],
    };
    SurfaceQuadrature { nodes }
}

/// Number of Gauss points on the half support arc used for ring interactions.
pub const ARC_POINTS: usize = 48;

/// Angular integral `int_0^{2 pi} K(|x - y|) d theta` for `|x| = r`, `|y| = s`
/// with `y` at angle `theta`, using a Gauss rule on the support arc.
pub fn angular_integral(kernel: &ScaledKernel, variant: Variant, r: f64, s: f64, points: usize) -> f64 {
    let support = kernel.support_radius();
    if (r - s).abs() >= support {
        return 0.0;
    }
    if r == 0.0 || s == 0.0 {
        return 2.0 * PI * kernel.at_dist(variant, r.max(s));
    }
    let c = (r * r + s * s - support * support) / (2.0 * r * s);
    let arc = if c <= -1.0 { PI } else { c.min(1.0).acos() };
    let diff2 = (r - s) * (r - s);
    let rs4 = 4.0 * r * s;
    let rule = quadrature::gauss(points);
    2.0 * rule.integrate(0.0, arc, |t| {
        let half = (0.5 * t).sin();
        kernel.at_sq_dist(variant, diff2 + rs4 * half * half)
    })
}

/// Angularly integrated kernel between rings, `K~(r_i, r_j) = r_j * int K d theta`,
/// stored as banded rows.
#[derive(Debug, Clone)]
pub struct RingKernelTable {
    pub variant: Variant,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl RingKernelTable {
    pub fn new(kernel: &ScaledKernel, variant: Variant, mesh: &VolumeMesh) -> Self {
        let support = kernel.support_radius();
        let rows = mesh
            .cells
            .iter()
            .map(|ci| {
                neighbors_within(mesh, ci.center, support)
                    .into_iter()
                    .map(|j| {
                        let s = mesh.cells[j].center;
                        (j, s * angular_integral(kernel, variant, ci.center, s, ARC_POINTS))
                    })
                    .collect()
            })
            .collect();
        Self { variant, rows }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|(k, _)| *k == j).map_or(0.0, |e| e.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelProfile;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn interval(delta: f64) -> Geometry {
        Geometry::new(Mode::Interval, 0.5, 1.0, delta).unwrap()
    }

    #[test]
    fn builds_interval_geometry() {
        let g = interval(0.1);
        assert_eq!(g.components(Region::Local), vec![(-1.0, -0.5), (0.5, 1.0)]);
        assert_eq!(interface_quadrature(&g).nodes.iter().map(|n| n.point).collect::<Vec<_>>(), vec![-0.5, 0.5]);
    }

    #[test]
    fn rejects_large_horizon() {
        let err = Geometry::new(Mode::Interval, 0.5, 1.0, 0.3).unwrap_err();
        assert!(matches!(err, GeometryError::HorizonTooLarge { .. }));
        assert!(err.to_string().contains("2*delta"));
        assert!(matches!(
            Geometry::new(Mode::Radial, 0.0, 1.0, 0.1),
            Err(GeometryError::DegenerateRegion(_))
        ));
        assert!(matches!(
            Geometry::new(Mode::Interval, -0.5, 1.0, 0.1),
            Err(GeometryError::DegenerateRegion(_))
        ));
    }

    #[test]
    fn radial_interface_measure() {
        let g = Geometry::new(Mode::Radial, 0.5, 1.0, 0.1).unwrap();
        let q = interface_quadrature(&g);
        assert_relative_eq!(q.total_measure(), PI, max_relative = 1e-14);
        assert_eq!(q.nodes[0].normal, 1.0);
    }

    #[test]
    fn interval_quadrature_orientation() {
        let q = interface_quadrature(&interval(0.1));
        assert_eq!(q.nodes[0], SurfaceNode { point: -0.5, weight: 1.0, normal: -1.0 });
        assert_eq!(q.nodes[1], SurfaceNode { point: 0.5, weight: 1.0, normal: 1.0 });
        assert_eq!(q.total_measure(), 2.0);
    }

    #[test]
    fn uniform_volume_meshes() {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, 0.05).unwrap();
        let nl = volume_mesh(&g, Region::Nonlocal, 0.25).unwrap();
        assert_eq!(nl.centers(), vec![-0.375, -0.125, 0.125, 0.375]);
        assert!(nl.cells.iter().all(|c| (c.measure - 0.25).abs() < 1e-15));
        let l = volume_mesh(&g, Region::Local, 0.25).unwrap();
        assert_eq!(l.len(), 4);
        let r = Geometry::new(Mode::Radial, 0.5, 1.0, 0.05).unwrap();
        let rings = volume_mesh(&r, Region::Nonlocal, 0.25).unwrap();
        assert_eq!(rings.len(), 2);
        assert_relative_eq!(rings.cells[0].measure, PI * 0.0625, max_relative = 1e-14);
        assert_relative_eq!(rings.cells[1].measure, PI * (0.25 - 0.0625), max_relative = 1e-14);
        assert!(volume_mesh(&r, Region::Local, 0.0).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let g = interval(0.05);
        let m = volume_mesh(&g, Region::Nonlocal, 0.1).unwrap();
        let near: Vec<f64> = neighbors_within(&m, 0.0, 0.2).iter().map(|&i| m.cells[i].center).collect();
        let expect = [-0.15, -0.05, 0.05, 0.15];
        assert_eq!(near.len(), 4);
        for (a, b) in near.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(neighbors_within(&m, 0.0, 0.049).is_empty());
        assert_eq!(neighbors_within(&m, 0.0, 10.0).len(), 10);
    }

    #[test]
    fn local_mesh_contains_interface_vertices() {
        let g = interval(0.1);
        let m = local_mesh(&g, 0.1).unwrap();
        assert_eq!(m.nodes.len(), 12);
        assert_eq!(m.elements.len(), 10);
        assert_eq!(m.nodes[m.interface_nodes[0]], -0.5);
        assert_eq!(m.nodes[m.interface_nodes[1]], 0.5);
        let r = Geometry::new(Mode::Radial, 0.5, 1.0, 0.1).unwrap();
        let m = local_mesh(&r, 0.1).unwrap();
        assert_eq!(m.nodes[m.interface_nodes[0]], 0.5);
        assert_eq!(*m.nodes.last().unwrap(), 1.0);
    }

    fn dense_angular(kernel: &ScaledKernel, variant: Variant, r: f64, s: f64) -> f64 {
        let f = |t: f64| kernel.at_sq_dist(variant, (r * r + s * s - 2.0 * r * s * t.cos()).max(0.0));
        // Split where the support circle crosses the ring so the kink sits on a panel edge.
        let c = (r * r + s * s - 4.0 * 0.01) / (2.0 * r * s);
        let edge = if c <= -1.0 { PI } else { c.min(1.0).acos() };
        2.0 * (quadrature::adaptive(&f, 0.0, edge, 1e-12) + quadrature::adaptive(&f, edge, PI, 1e-12))
    }

    #[test]
    fn ring_table_is_symmetric_up_to_radius() {
        let g = Geometry::new(Mode::Radial, 0.5, 1.0, 0.1).unwrap();
        let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 2).unwrap();
        let m = volume_mesh(&g, Region::Nonlocal, 0.025).unwrap();
        let t = RingKernelTable::new(&k, Variant::Base, &m);
        for i in 0..m.len() {
            for &(j, v) in &t.rows[i] {
                let ri = m.cells[i].center;
                let rj = m.cells[j].center;
                assert_relative_eq!(v / rj, t.get(j, i) / ri, max_relative = 1e-12);
            }
            for j in 0..m.len() {
                let dist = (m.cells[i].center - m.cells[j].center).abs();
                if dist >= 0.2 - 1e-12 {
                    assert!(t.get(i, j).abs() < 1e-12);
                } else if dist < 0.2 - 1e-9 {
                    assert!(t.get(i, j) > 0.0);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cell_measures_partition_regions(a in 0.2f64..0.8, h in 0.003f64..0.1, radial in any::<bool>()) {
            let mode = if radial { Mode::Radial } else { Mode::Interval };
            let g = Geometry::new(mode, a, 1.0, 0.05).unwrap();
            for region in [Region::Local, Region::Nonlocal] {
                let m = volume_mesh(&g, region, h).unwrap();
                let exact = g.measure(region);
                prop_assert!((m.total_measure() - exact).abs() <= 1e-12 * exact);
                prop_assert!(m.cells.windows(2).all(|w| w[0].hi <= w[1].lo + 1e-15));
                prop_assert!(m.h <= h * (1.0 + 1e-12));
            }
        }

        #[test]
        fn neighbor_search_matches_brute_force(point in -0.6f64..0.6, radius in 0.0001f64..0.5, n in 10usize..10_000) {
            let g = interval(0.05);
            let m = volume_mesh(&g, Region::Nonlocal, 1.0 / n as f64).unwrap();
            let fast = neighbors_within(&m, point, radius);
            let brute: Vec<usize> = (0..m.len()).filter(|&i| (m.cells[i].center - point).abs() < radius).collect();
            prop_assert_eq!(fast, brute);
        }

        #[test]
        fn ring_table_matches_dense_angular_rule(r in 0.01f64..0.5, off in -0.2f64..0.2, variant in 0usize..3) {
            let s = (r + off).abs().max(1e-3);
            let v = Variant::ALL[variant];
            let k = ScaledKernel::new(KernelProfile::quadratic(), 0.1, 2).unwrap();
            let table = angular_integral(&k, v, r, s, ARC_POINTS);
            let dense = dense_angular(&k, v, r, s);
            prop_assert!((table - dense).abs() <= 1e-8 * dense.abs().max(1e-3), "{} vs {}", table, dense);
        }
    }
}
