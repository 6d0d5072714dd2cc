//! Acceptance checks shared by the command line and the test suite.
//!
//! Each criterion measures one property at its stated tolerance and reports
//! PASS or FAIL together with the measured values and its runtime.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::{
    self, coercivity_sample, convergence_study, discretize, error_report, fit_slope, half_integral_check, l2_norm,
    shift_bound_constant, shift_for, stability_ratio, truncation_interface, BandLimited, DenseRule, MeshRule,
    NonlocalTruncation, StudySetup,
};
use crate::assembly::{bilinear_b, bilinear_b_hat, energy, source_pairing, Factorized, ProblemSpec, SolverMethod, Triple};
use crate::geometry::{interface_quadrature, Geometry, Mode};
use crate::kernel::{normalization_constant, KernelProfile, ScaledKernel, Variant};
use crate::nonlocal_ops::assemble_source;
use crate::quadrature;
use crate::reference::{manufactured_case, solve_transmission_fem, ManufacturedSolution};

/// Settings shared by all criteria.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub coeff_local: f64,
    pub coeff_nonlocal: f64,
    pub profile: KernelProfile,
    pub seed: u64,
    pub mesh: MeshRule,
    pub method: SolverMethod,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            coeff_local: 1.0,
            coeff_nonlocal: 2.0,
            profile: KernelProfile::quadratic(),
            seed: 7,
            mesh: MeshRule::default(),
            method: SolverMethod::Direct,
        }
    }
}

impl VerifyOptions {
    fn spec(&self) -> ProblemSpec {
        ProblemSpec { coeff_local: self.coeff_local, coeff_nonlocal: self.coeff_nonlocal }
    }

    fn case(&self, id: &str) -> Result<ManufacturedSolution, String> {
        manufactured_case(id, self.coeff_local, self.coeff_nonlocal).map_err(|e| e.to_string())
    }
}

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Outcome {
    /// One summary line.
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} ({:.2}s of {:.0}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs_f64(),
            self.detail
        )
    }
}

/// Criterion identifiers with their titles and runtime budgets.
pub const CRITERIA: [(u8, &str, u64); 10] = [
    (1, "kernel normalization", 1),
    (2, "half-integral defect", 10),
    (3, "interface truncation rate", 30),
    (4, "nonlocal truncation", 30),
    (5, "compatibility shift", 10),
    (6, "coercivity and continuity sampling", 60),
    (7, "algebraic identities", 10),
    (8, "convergence in the horizon", 720),
    (9, "well-posedness stability", 120),
    (10, "agreement with the transmission oracle", 60),
];

const SWEEP: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
const STUDY: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Runs one criterion.
pub fn run(id: u8, opts: &VerifyOptions) -> Outcome {
    let (_, title, budget) = CRITERIA.iter().copied().find(|c| c.0 == id).unwrap_or((id, "unknown criterion", 0));
    let start = Instant::now();
    let result = match id {
        1 => kernel_normalization(opts),
        2 => half_integral(opts),
        3 => interface_truncation(opts),
        4 => nonlocal_truncation(opts),
        5 => compatibility_shift(opts),
        6 => coercivity(opts),
        7 => identities(opts),
        8 => convergence(opts),
        9 => stability(opts),
        10 => oracle(opts),
        _ => Err(format!("no criterion {id}")),
    };
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget);
    let (ok, mut detail) = match result {
        Ok(check) => check,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str("; runtime budget exceeded");
    }
    Outcome { id, title, passed: ok && in_time, detail, elapsed, budget }
}

/// Runs all criteria in order.
pub fn run_all(opts: &VerifyOptions) -> Vec<Outcome> {
    CRITERIA.iter().map(|c| run(c.0, opts)).collect()
}

type Check = Result<(bool, String), String>;

fn slope_of(x: &[f64], y: &[f64]) -> Result<f64, String> {
    fit_slope(x, y).map(|f| f.slope).ok_or_else(|| format!("cannot fit slope to {y:?}"))
}

fn list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn spread(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    hi / lo
}

fn kernel_normalization(_: &VerifyOptions) -> Check {
    let p = KernelProfile::quadratic();
    let a1 = normalization_constant(&p, 1).map_err(|e| e.to_string())?;
    let a2 = normalization_constant(&p, 2).map_err(|e| e.to_string())?;
    let e1 = (a1 / (105.0 / 64.0) - 1.0).abs();
    let e2 = (a2 / (3.0 / PI) - 1.0).abs();
    let mut worst: f64 = 0.0;
    for delta in [0.2, 0.1, 0.05] {
        for dim in [1, 2] {
            let k = ScaledKernel::new(p.clone(), delta, dim).map_err(|e| e.to_string())?;
            let s = k.support_radius();
            let total = match dim {
                1 => 2.0 * quadrature::adaptive(&|r| k.at_dist(Variant::Integrated, r), 0.0, s, 1e-14),
                _ => 2.0 * PI * quadrature::adaptive(&|r| r * k.at_dist(Variant::Integrated, r), 0.0, s, 1e-14),
            };
            worst = worst.max((total - 1.0).abs());
        }
    }
    let ok = e1 <= 1e-8 && e2 <= 1e-8 && worst <= 1e-8;
    Ok((ok, format!("alpha1 = {a1:.10} (rel {e1:.1e}), alpha2 = {a2:.10} (rel {e2:.1e}), max |int - 1| = {worst:.1e}")))
}

fn half_integral(opts: &VerifyOptions) -> Check {
    let flat = {
        let case = opts.case("mc1")?;
        let d = discretize(&case, &opts.profile, 0.1, opts.mesh).map_err(|e| e.to_string())?;
        half_integral_check(&d)
    };
    let case = opts.case("mcR1")?;
    let mut curved = Vec::new();
    for &delta in &SWEEP {
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        curved.push(half_integral_check(&d));
    }
    let slope = slope_of(&SWEEP, &curved)?;
    let ok = flat <= 1e-8 && (0.8..=1.3).contains(&slope);
    Ok((ok, format!("flat max |2w-1| = {flat:.1e}; curved slope = {slope:.3} over {}", list(&curved))))
}

fn interface_truncation(opts: &VerifyOptions) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ["mc1", "mcR1"] {
        let case = opts.case(id)?;
        let mut norms = Vec::new();
        for &delta in &SWEEP {
            let g = case.geometry(delta).map_err(|e| e.to_string())?;
            let k = ScaledKernel::new(opts.profile.clone(), delta, g.dim()).map_err(|e| e.to_string())?;
            let s = interface_quadrature(&g);
            norms.push(truncation_interface(&case, &k, &g, &s, &DenseRule::default()).norm);
        }
        let slope = slope_of(&SWEEP, &norms)?;
        let pass = (1.7..=2.3).contains(&slope);
        ok &= pass;
        parts.push(format!("{id} slope = {slope:.3} ({})", if pass { "in window" } else { "outside [1.7, 2.3]" }));
    }
    Ok((ok, parts.join("; ")))
}

fn nonlocal_truncation(opts: &VerifyOptions) -> Check {
    let second = |case: &ManufacturedSolution, delta: f64| -> Result<f64, String> {
        let g = case.geometry(delta).map_err(|e| e.to_string())?;
        let k = ScaledKernel::new(opts.profile.clone(), delta, g.dim()).map_err(|e| e.to_string())?;
        let s = interface_quadrature(&g);
        Ok(NonlocalTruncation::new(case, &k, &g, &s, DenseRule::coarse()).norms().1)
    };
    let flat_case = opts.case("mc1")?;
    let mut flat: f64 = 0.0;
    for &delta in &SWEEP {
        flat = flat.max(second(&flat_case, delta)?);
    }
    let radial = opts.case("mcR1")?;
    let norms = SWEEP.iter().map(|&d| second(&radial, d)).collect::<Result<Vec<_>, _>>()?;
    let slope = slope_of(&SWEEP, &norms)?;
    let ok = flat <= 1e-8 && (0.3..=0.7).contains(&slope);
    Ok((ok, format!("flat max norm = {flat:.1e}; radial slope = {slope:.3} over {}", list(&norms))))
}

fn compatibility_shift(opts: &VerifyOptions) -> Check {
    let g0 = Geometry::new(Mode::Interval, 0.5, 1.0, 0.0).map_err(|e| e.to_string())?;
    let shift_at = |delta: f64, f: &(dyn Fn(f64) -> f64 + Sync)| -> Result<f64, String> {
        let g = Geometry::new(Mode::Interval, 0.5, 1.0, delta).map_err(|e| e.to_string())?;
        let k = ScaledKernel::new(opts.profile.clone(), delta, 1).map_err(|e| e.to_string())?;
        let (hl, hn) = opts.mesh.sizes(delta);
        shift_for(&g, &k, hl, hn, f).map_err(|e| e.to_string())
    };
    let cosine = |x: f64| (PI * x).cos();
    let shifts = SWEEP.iter().map(|&d| shift_at(d, &cosine).map(f64::abs)).collect::<Result<Vec<_>, _>>()?;
    let slope = slope_of(&SWEEP, &shifts)?;
    let case = opts.case("mc1")?;
    let mut bound: f64 = 0.0;
    for &delta in &SWEEP {
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        bound = bound.max(shift_bound_constant(&d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = BandLimited::random(&mut rng, 6, 1.0);
        let norm = l2_norm(&g0, &|x| f.eval(x));
        for &delta in &SWEEP {
            worst = worst.max(shift_at(delta, &|x| f.eval(x))?.abs() / norm);
        }
    }
    let ok = slope >= 0.8 && worst <= bound;
    Ok((ok, format!("cosine shift slope = {slope:.3}; max |shift|/|f| = {worst:.3e} vs bound {bound:.3}")))
}

fn coercivity(opts: &VerifyOptions) -> Check {
    let case = opts.case("mc1")?;
    let spec = opts.spec();
    let mut mins = Vec::new();
    let mut conts = Vec::new();
    for &delta in &SWEEP[..3] {
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        let s = coercivity_sample(&spec, &d, 200, opts.seed);
        mins.push(s.min_ratio);
        conts.push(s.max_continuity);
    }
    let positive = mins.iter().all(|m| *m > 0.0);
    // The scaled continuity ratio must stay bounded above as the horizon shrinks.
    let growth = conts.iter().fold(0.0f64, |m, c| m.max(*c)) / conts[0];
    let ok = positive && spread(&mins) < 10.0 && conts.iter().all(|c| c.is_finite()) && growth < 10.0;
    Ok((
        ok,
        format!(
            "min B[w;w]/|w|^2 = {} (spread {:.2}); max |B|d^2/(|u||v|) = {} (growth {:.2})",
            list(&mins),
            spread(&mins),
            list(&conts),
            growth
        ),
    ))
}

fn identities(opts: &VerifyOptions) -> Check {
    let spec = opts.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut energy_gap, mut weak_gap, mut recovery): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (id, delta) in [("mc1", 0.1), ("mc2", 0.05), ("mcR1", 0.1)] {
        let case = opts.case(id)?;
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let (ul, un) = analysis::random_zero_mean_pair(&d, &mut rng);
            let b = bilinear_b(&spec, &d, (&ul, &un), (&ul, &un));
            let e = energy(&spec, &d, &ul, &un, &d.interface_values(&ul, &un)).total();
            energy_gap = energy_gap.max((b - e).abs() / e);
            let t = Triple { local: ul, nonlocal: un, interface: normals(&mut rng, d.surface.len()) };
            let bh = bilinear_b_hat(&spec, &d, &t, &t);
            let eh = energy(&spec, &d, &t.local, &t.nonlocal, &t.interface).total();
            energy_gap = energy_gap.max((bh - eh).abs() / eh);
        }
        let source = analysis::case_source(&d, &case);
        let sol = Factorized::new(&spec, &d, opts.method)
            .and_then(|f| f.solve_source(&source))
            .map_err(|e| e.to_string())?;
        let scale = sol.u_nonlocal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        recovery = recovery.max(crate::assembly::nl_recovery_residual(&spec, &d, &sol, &source) / scale);
        let u = sol.triple();
        for _ in 0..20 {
            let (vl, vn) = analysis::random_zero_mean_pair(&d, &mut rng);
            let v = Triple { local: vl, nonlocal: vn, interface: normals(&mut rng, d.surface.len()) };
            let lhs = bilinear_b_hat(&spec, &d, &u, &v);
            let rhs = source_pairing(&d, &source, &v);
            weak_gap = weak_gap.max((lhs - rhs).abs() / rhs.abs().max(lhs.abs()));
        }
    }
    // Recovery must also hold on every convergence-study solution.
    for id in ["mc1", "mc2"] {
        let setup = study_setup(opts, id)?;
        let table = convergence_study(&setup).map_err(|e| e.to_string())?;
        for row in &table.rows {
            recovery = recovery.max(row.recovery);
            energy_gap = energy_gap.max(row.identity);
        }
    }
    let ok = energy_gap <= 1e-10 && recovery <= 1e-9 && weak_gap <= 1e-9;
    Ok((ok, format!("energy identity {energy_gap:.1e}; recovery {recovery:.1e}; weak form {weak_gap:.1e}")))
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn study_setup(opts: &VerifyOptions, id: &str) -> Result<StudySetup, String> {
    Ok(StudySetup {
        spec: opts.spec(),
        case: opts.case(id)?,
        profile: opts.profile.clone(),
        deltas: STUDY.to_vec(),
        mesh: opts.mesh,
        method: opts.method,
    })
}

fn convergence(opts: &VerifyOptions) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ["mc1", "mc2", "mcR1"] {
        let table = convergence_study(&study_setup(opts, id)?).map_err(|e| e.to_string())?;
        let combined: Vec<f64> = table.rows.iter().map(|r| r.errors.combined).collect();
        let decreasing = combined.windows(2).all(|w| w[1] < w[0]);
        let slope = table.slope("combined").map(|f| f.slope).ok_or("no slope")?;
        let pass = decreasing && (0.8..=2.2).contains(&slope);
        ok &= pass;
        parts.push(format!("{id} slope = {slope:.3}{}", if decreasing { "" } else { " (not decreasing)" }));
    }
    Ok((ok, parts.join("; ")))
}

fn stability(opts: &VerifyOptions) -> Check {
    let spec = opts.spec();
    let case = opts.case("mc1")?;
    let g0 = Geometry::new(Mode::Interval, 0.5, 1.0, 0.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sources: Vec<BandLimited> = (0..10).map(|_| BandLimited::random(&mut rng, 6, 1.0)).collect();
    let norms: Vec<f64> = sources.iter().map(|f| l2_norm(&g0, &|x| f.eval(x))).collect();
    let mut ratios = vec![Vec::new(); sources.len()];
    for &delta in &SWEEP {
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        let solver = Factorized::new(&spec, &d, opts.method).map_err(|e| e.to_string())?;
        for (j, f) in sources.iter().enumerate() {
            let src = assemble_source(&d.geometry, &d.local, &d.mesh, &d.kernel, &|x| f.eval(x));
            let sol = solver.solve_source(&src).map_err(|e| e.to_string())?;
            ratios[j].push(stability_ratio(&d, &sol, norms[j]));
        }
    }
    let worst = ratios.iter().map(|r| spread(r)).fold(0.0, f64::max);
    Ok((worst < 10.0, format!("largest variation across horizons = {worst:.3} over 10 sources")))
}

fn oracle(opts: &VerifyOptions) -> Check {
    let spec = opts.spec();
    let case = opts.case("mc1")?;
    let mut dist = Vec::new();
    let mut bounds = Vec::new();
    for &delta in &STUDY {
        let d = discretize(&case, &opts.profile, delta, opts.mesh).map_err(|e| e.to_string())?;
        let src = analysis::case_source(&d, &case);
        let sol = Factorized::new(&spec, &d, opts.method).and_then(|f| f.solve_source(&src)).map_err(|e| e.to_string())?;
        let (hl, _) = opts.mesh.sizes(delta);
        let fem = solve_transmission_fem(&d.geometry, spec.coeff_local, spec.coeff_nonlocal, &|x| case.source(x), hl)
            .map_err(|e| e.to_string())?;
        let diff: Vec<f64> = d
            .local
            .nodes
            .iter()
            .zip(&sol.u_local)
            .map(|(&x, u)| u - fem.evaluate(x).unwrap_or(f64::NAN))
            .collect();
        let local = d.space().error_sq(&diff, &|_| 0.0, &|_| 0.0).0;
        let nonlocal: f64 = d
            .mesh
            .cells
            .iter()
            .zip(&sol.u_nonlocal)
            .map(|(c, u)| c.measure * (u - fem.evaluate(c.center).unwrap_or(f64::NAN)).powi(2))
            .sum();
        dist.push((local + nonlocal).sqrt());
        bounds.push(error_report(&d, &sol, &case).combined);
    }
    let monotone = dist.windows(2).all(|w| w[1] < w[0]);
    let within = dist.iter().zip(&bounds).all(|(a, b)| *a <= 2.0 * b);
    Ok((monotone && within, format!("L2 distance {}; combined error {}", list(&dist), list(&bounds))))
}
