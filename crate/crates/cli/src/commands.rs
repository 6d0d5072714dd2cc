//! Subcommand implementations.

use std::path::Path;

use lncouple::analysis::{
    case_source, convergence_study, discretize, error_report, AnalysisError, RateTable, StudySetup, METRICS,
};
use lncouple::assembly::Factorized;
use lncouple::geometry::Region;
use lncouple::kernel::{normalization_constant, KernelProfile, ScaledKernel, Variant};
use lncouple::quadrature;
use lncouple::verification::{run_all, VerifyOptions};

use crate::config::{ConfigError, RunConfig};
use crate::output::{csv_bytes, num, write_atomic};

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Solver(_) | CommandError::Io(_) => 3,
        }
    }
}

impl From<AnalysisError> for CommandError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Solver(s) => CommandError::Solver(s.to_string()),
            other => CommandError::Config(ConfigError::Invalid(other.to_string())),
        }
    }
}

fn region_tag(region: Region) -> &'static str {
    match region {
        Region::Local => "local",
        Region::Nonlocal => "nonlocal",
    }
}

/// One coupled solve at `kernel.delta`.
pub fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CommandError> {
    let case = cfg.case()?;
    let spec = cfg.spec()?;
    let delta = cfg.kernel.delta;
    let disc = discretize(&case, &cfg.profile()?, delta, cfg.mesh_rule())?;
    let source = case_source(&disc, &case);
    let solution = Factorized::new(&spec, &disc, cfg.method()?)
        .and_then(|f| f.solve_source(&source))
        .map_err(|e| CommandError::Solver(e.to_string()))?;
    let mut rows = Vec::new();
    for (x, v) in disc.local.nodes.iter().zip(&solution.u_local) {
        rows.push(vec![num(*x), num(*v), num(case.value_in(Region::Local, *x)), region_tag(Region::Local).into()]);
    }
    for (c, v) in disc.mesh.cells.iter().zip(&solution.u_nonlocal) {
        let x = c.center;
        rows.push(vec![num(x), num(*v), num(case.value_in(Region::Nonlocal, x)), region_tag(Region::Nonlocal).into()]);
    }
    for (n, v) in disc.surface.nodes.iter().zip(&solution.u_interface) {
        let exact = case.normal_derivative(Region::Nonlocal, n.point, n.normal);
        rows.push(vec![num(n.point), num(*v), num(exact), "interface_flux".into()]);
    }
    write_atomic(&out.join("solution.csv"), &csv_bytes(&["point", "value", "exact", "region"], &rows))?;
    let report = error_report(&disc, &solution, &case);
    let metrics = [
        ("h1_L", report.h1_local),
        ("h1_NL", report.h1_nonlocal),
        ("l2_gamma", report.l2_interface),
        ("combined", report.combined),
        ("residual", solution.residual),
    ];
    let rows: Vec<Vec<String>> = metrics.iter().map(|(k, v)| vec![k.to_string(), num(*v)]).collect();
    write_atomic(&out.join("errors.csv"), &csv_bytes(&["metric", "value"], &rows))?;
    println!("case {} delta {delta}: {} unknowns", case.id.name(), disc.layout().size());
    for (k, v) in metrics {
        println!("  {k:<9} {v:.6e}");
    }
    Ok(())
}

/// Rate table as CSV with a slope footer.
pub fn rate_table_csv(table: &RateTable) -> Vec<u8> {
    let header = ["delta", "h_local", "h_nl", "h1_L", "h1_NL", "l2_gamma", "combined", "r_gamma", "r_nl2", "half_integral"];
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![num(r.delta), num(r.h_local), num(r.h_nonlocal)];
            row.extend(METRICS.iter().map(|m| num(r.metric(m))));
            row
        })
        .collect();
    let mut bytes = csv_bytes(&header, &rows);
    bytes.extend_from_slice(b"# slopes: metric,slope,ci95,residual,preasymptotic\n");
    for (m, fit) in &table.slopes {
        let line = match fit {
            Some(f) => format!("# {m},{:.6},{:.6},{:.6},{}\n", f.slope, f.ci95, f.residual, f.preasymptotic()),
            None => format!("# {m},none\n"),
        };
        bytes.extend_from_slice(line.as_bytes());
    }
    bytes
}

/// Horizon sweep with fitted rates.
pub fn convergence(cfg: &RunConfig, out: &Path) -> Result<(), CommandError> {
    let setup = StudySetup {
        spec: cfg.spec()?,
        case: cfg.case()?,
        profile: cfg.profile()?,
        deltas: cfg.study.deltas.clone(),
        mesh: cfg.mesh_rule(),
        method: cfg.method()?,
    };
    let table = convergence_study(&setup).map_err(|e| CommandError::from(e.source))?;
    write_atomic(&out.join("convergence.csv"), &rate_table_csv(&table))?;
    for m in METRICS {
        let text: String = table.rows.iter().map(|r| format!("{} {}\n", num(r.delta), num(r.metric(m)))).collect();
        write_atomic(&out.join(format!("{m}.dat")), text.as_bytes())?;
    }
    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "delta", "combined", "l2_gamma", "r_gamma", "half_int");
    for r in &table.rows {
        println!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.delta,
            r.errors.combined,
            r.errors.l2_interface,
            r.truncation.r_interface,
            r.truncation.half_integral_max
        );
    }
    if table.rows.len() < 3 {
        eprintln!("warning: {} horizon(s) given; at least 3 are needed to fit slopes", table.rows.len());
    }
    for (m, fit) in &table.slopes {
        if let Some(f) = fit {
            let flag = if f.preasymptotic() { " (preasymptotic)" } else { "" };
            println!("slope {m:<14} {:.3} +/- {:.3}{flag}", f.slope, f.ci95);
        }
    }
    Ok(())
}

/// Smallest allowed ratio of horizon to mesh size.
pub const MIN_RESOLUTION: f64 = 4.0;

/// Runs the resolution guard and the acceptance suite. Returns whether all passed.
pub fn verify(cfg: &RunConfig) -> Result<bool, CommandError> {
    let ratio = cfg.mesh.local_ratio.min(cfg.mesh.nonlocal_ratio);
    let guard = ratio >= MIN_RESOLUTION;
    println!(
        "{} [ 0] resolution guard: h = delta/{ratio} (need h <= delta/{MIN_RESOLUTION})",
        if guard { "PASS" } else { "FAIL" }
    );
    if !guard {
        println!("suite skipped: meshes are too coarse for the horizon");
        return Ok(false);
    }
    let opts = VerifyOptions {
        coeff_local: cfg.problem.coeff_local,
        coeff_nonlocal: cfg.problem.coeff_nonlocal,
        profile: cfg.profile()?,
        seed: cfg.seed,
        mesh: cfg.mesh_rule(),
        method: cfg.method()?,
    };
    let outcomes = run_all(&opts);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed} of {} criteria passed", outcomes.len());
    Ok(passed == outcomes.len())
}

/// Prints normalization, floor, support and antiderivative residuals.
pub fn kernel_info(profile: &KernelProfile, dim: usize) -> Result<(), CommandError> {
    let invalid = |e: lncouple::kernel::KernelError| CommandError::Config(ConfigError::Invalid(e.to_string()));
    let alpha = normalization_constant(profile, dim).map_err(invalid)?;
    let kernel = ScaledKernel::new(profile.clone(), 1.0, dim).map_err(invalid)?;
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for i in 0..=20 {
        let r = i as f64 / 20.0;
        let tail = |v: Variant| quadrature::adaptive(&|s| profile.value(v, s), r, 1.0, 1e-13);
        first = first.max((profile.value(Variant::Integrated, r) - tail(Variant::Base)).abs());
        second = second.max((profile.value(Variant::TwiceIntegrated, r) - tail(Variant::Integrated)).abs());
    }
    println!("profile          {}", profile.name());
    println!("dimension        {dim}");
    println!("alpha            {alpha:.6} (full {alpha:.15})");
    println!("gamma0           {}", profile.nondegeneracy_floor());
    println!("support          profile on [0, 1]; scaled kernel vanishes for |x - y| >= {} * delta", kernel.support_radius());
    println!("antiderivative   max |first tail - integral| = {first:.3e}");
    println!("antiderivative   max |second tail - integral| = {second:.3e}");
    Ok(())
}
