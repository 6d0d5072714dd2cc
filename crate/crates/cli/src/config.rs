//! Run configuration: a TOML file with fixed blocks, validated on load.

use std::path::{Path, PathBuf};

use lncouple::analysis::MeshRule;
use lncouple::assembly::{ProblemSpec, SolverMethod};
use lncouple::geometry::Mode;
use lncouple::kernel::KernelProfile;
use lncouple::reference::{CaseId, ManufacturedSolution};
use serde::Deserialize;

/// Configuration failures; all map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub geometry: GeometryBlock,
    #[serde(default)]
    pub kernel: KernelBlock,
    #[serde(default)]
    pub problem: ProblemBlock,
    #[serde(default)]
    pub mesh: MeshBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub study: StudyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    /// `interval` or `radial`; must agree with the case when given.
    pub mode: Option<String>,
    pub interface: f64,
    pub outer: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub profile: String,
    /// Optional two-column `r value` table replacing the named profile.
    pub table: Option<PathBuf>,
    /// Horizon used by `solve`.
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub case: String,
    pub coeff_local: f64,
    pub coeff_nonlocal: f64,
}

/// Mesh sizes as `delta / ratio`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub local_ratio: f64,
    pub nonlocal_ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// `direct` or `iterative`.
    pub method: String,
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

fn default_seed() -> u64 {
    7
}

impl Default for GeometryBlock {
    fn default() -> Self {
        Self { mode: None, interface: 0.5, outer: 1.0 }
    }
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self { profile: "quadratic".into(), table: None, delta: 0.1 }
    }
}

impl Default for ProblemBlock {
    fn default() -> Self {
        Self { case: "mc1".into(), coeff_local: 1.0, coeff_nonlocal: 2.0 }
    }
}

impl Default for MeshBlock {
    fn default() -> Self {
        Self { local_ratio: 8.0, nonlocal_ratio: 8.0 }
    }
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self { method: "direct".into(), tol: 1e-12, restart: 200, max_iter: 5000 }
    }
}

impl Default for StudyBlock {
    fn default() -> Self {
        Self { deltas: vec![0.2, 0.1, 0.05, 0.025] }
    }
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            geometry: GeometryBlock::default(),
            kernel: KernelBlock::default(),
            problem: ProblemBlock::default(),
            mesh: MeshBlock::default(),
            solver: SolverBlock::default(),
            study: StudyBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("geometry.interface", self.geometry.interface)?;
        positive("geometry.outer", self.geometry.outer)?;
        if self.geometry.outer <= self.geometry.interface {
            return Err(ConfigError::Invalid("geometry.outer must exceed geometry.interface".into()));
        }
        positive("kernel.delta", self.kernel.delta)?;
        positive("problem.coeff_local", self.problem.coeff_local)?;
        positive("problem.coeff_nonlocal", self.problem.coeff_nonlocal)?;
        positive("mesh.local_ratio", self.mesh.local_ratio)?;
        positive("mesh.nonlocal_ratio", self.mesh.nonlocal_ratio)?;
        positive("solver.tol", self.solver.tol)?;
        if self.solver.restart == 0 || self.solver.max_iter == 0 {
            return Err(ConfigError::Invalid("solver.restart and solver.max_iter must be positive".into()));
        }
        self.method()?;
        let id = self.case_id()?;
        if let Some(mode) = &self.geometry.mode {
            let wanted = match mode.as_str() {
                "interval" => Mode::Interval,
                "radial" => Mode::Radial,
                other => return Err(ConfigError::Invalid(format!("unknown geometry.mode '{other}'"))),
            };
            if wanted != id.mode() {
                return Err(ConfigError::Invalid(format!("case '{}' does not live on a {mode} geometry", id.name())));
            }
        }
        if self.study.deltas.is_empty() {
            return Err(ConfigError::Invalid("study.deltas must not be empty".into()));
        }
        for d in &self.study.deltas {
            positive("study.deltas entry", *d)?;
        }
        if self.study.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::Invalid("study.deltas must be strictly decreasing".into()));
        }
        if self.kernel.table.is_none() {
            KernelProfile::by_name(&self.kernel.profile).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn case_id(&self) -> Result<CaseId, ConfigError> {
        CaseId::by_name(&self.problem.case).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn case(&self) -> Result<ManufacturedSolution, ConfigError> {
        let g = &self.geometry;
        ManufacturedSolution::new(self.case_id()?, g.interface, g.outer, self.problem.coeff_local, self.problem.coeff_nonlocal)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        ProblemSpec::new(self.problem.coeff_local, self.problem.coeff_nonlocal).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn profile(&self) -> Result<KernelProfile, ConfigError> {
        match &self.kernel.table {
            None => KernelProfile::by_name(&self.kernel.profile).map_err(|e| ConfigError::Invalid(e.to_string())),
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.clone(), source })?;
                KernelProfile::from_table_text(&self.kernel.profile, &text).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    pub fn mesh_rule(&self) -> MeshRule {
        MeshRule { local_ratio: self.mesh.local_ratio, nonlocal_ratio: self.mesh.nonlocal_ratio }
    }

    pub fn method(&self) -> Result<SolverMethod, ConfigError> {
        match self.solver.method.as_str() {
            "direct" => Ok(SolverMethod::Direct),
            "iterative" => Ok(SolverMethod::Iterative {
                tol: self.solver.tol,
                restart: self.solver.restart,
                max_iter: self.solver.max_iter,
            }),
            other => Err(ConfigError::Invalid(format!("unknown solver.method '{other}'"))),
        }
    }
}
