//! Declarative experiment configs: one JSON document per experiment.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kam_spectra::lattice::MultiIndex;
use kam_spectra::perturbation::ProfileEntry;
use kam_spectra::spectrum::Transform;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub perturbation: PerturbationBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub dimension: usize,
    pub omega: Vec<f64>,
    pub transform: TransformConfig,
    pub gamma: f64,
    #[serde(default)]
    pub c: ConstantSource,
    #[serde(default)]
    pub base_point: Option<Vec<i64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformConfig {
    Identity,
    Cubic { beta: f64 },
    TanPi,
    Sawtooth,
}

impl TransformConfig {
    pub fn to_transform(&self) -> Transform {
        match self {
            TransformConfig::Identity => Transform::Identity,
            TransformConfig::Cubic { beta } => Transform::Cubic { beta: *beta },
            TransformConfig::TanPi => Transform::TanPi,
            TransformConfig::Sawtooth => Transform::Sawtooth,
        }
    }
}

/// Where the gap constant c comes from: a declared value or a window scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstantSource {
    Declared { declared: f64 },
    Scan { scan: ScanSpec },
}

impl Default for ConstantSource {
    fn default() -> Self {
        ConstantSource::Scan {
            scan: ScanSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    /// Offset reach of the pair scans; defaults to the window diameter in
    /// one dimension and 8 in higher dimensions.
    #[serde(default)]
    pub kmax: Option<u64>,
    #[serde(default)]
    pub jmax: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBlock {
    pub kind: PerturbationKindConfig,
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub hermitian: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationKindConfig {
    Laplacian,
    Profile { entries: Vec<ProfileEntry> },
    Explicit { diagonals: Vec<ExplicitDiagonal> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitDiagonal {
    pub offset: Vec<i64>,
    /// Entries as (index, re, im) triples.
    pub entries: Vec<(Vec<i64>, f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    /// A literal value.
    Value(f64),
    /// "eps_star": exactly the admissible threshold.
    Named(String),
    /// min(eps_star, cap).
    Capped { cap: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub epsilon: EpsilonSpec,
    #[serde(default)]
    pub epsilon_sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub omega_sweep: Option<Vec<Vec<f64>>>,
    pub radius: i64,
    #[serde(default)]
    pub interior_radius: Option<i64>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Offset reach of the perturbed-gap report.
    #[serde(default)]
    pub kmax_report: Option<u64>,
    /// Force the dense cross-check on or off; defaults to on for
    /// self-adjoint runs.
    #[serde(default)]
    pub oracle: Option<bool>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_mode() -> String {
    "rigorous".into()
}

fn default_max_steps() -> usize {
    30
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_convergence_tol")]
    pub convergence_tol_rel: f64,
    #[serde(default = "default_condition_slack")]
    pub condition_slack: f64,
    #[serde(default = "default_ortho_tol")]
    pub ortho_tol: f64,
    #[serde(default = "default_oracle_tol")]
    pub oracle_tol: f64,
}

fn default_convergence_tol() -> f64 {
    1e-14
}
fn default_condition_slack() -> f64 {
    1e-9
}
fn default_ortho_tol() -> f64 {
    1e-8
}
fn default_oracle_tol() -> f64 {
    1e-14
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            convergence_tol_rel: default_convergence_tol(),
            condition_slack: default_condition_slack(),
            ortho_tol: default_ortho_tol(),
            oracle_tol: default_oracle_tol(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub eigenvalues_csv: Option<PathBuf>,
    #[serde(default)]
    pub vectors_csv: Option<PathBuf>,
    #[serde(default)]
    pub sweep_csv: Option<PathBuf>,
    #[serde(default)]
    pub ledger: Option<PathBuf>,
    #[serde(default)]
    pub trace: bool,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| "config does not parse")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.dimension == 0 {
            bail!("model.dimension must be >= 1");
        }
        if self.model.omega.len() != self.model.dimension {
            bail!(
                "model.omega has {} components for dimension {}",
                self.model.omega.len(),
                self.model.dimension
            );
        }
        if self.model.gamma <= 0.0 {
            bail!("model.gamma must be positive");
        }
        if let ConstantSource::Declared { declared } = &self.model.c {
            if *declared < 1.0 {
                bail!("model.c.declared must be >= 1");
            }
        }
        if self.perturbation.alpha <= 0.0 {
            bail!("perturbation.alpha must be positive");
        }
        if self.run.radius < 1 {
            bail!("run.radius must be >= 1");
        }
        if let Some(ir) = self.run.interior_radius {
            if ir < 0 || ir > self.run.radius {
                bail!("run.interior_radius must lie in [0, radius]");
            }
        }
        match self.run.mode.as_str() {
            "rigorous" | "empirical" => {}
            other => bail!("run.mode must be rigorous or empirical, got {other:?}"),
        }
        let t = &self.run.tolerances;
        if t.convergence_tol_rel <= 0.0
            || t.condition_slack <= 0.0
            || t.ortho_tol <= 0.0
            || t.oracle_tol <= 0.0
        {
            bail!("all tolerances must be positive");
        }
        if let EpsilonSpec::Named(name) = &self.run.epsilon {
            if name != "eps_star" {
                bail!("run.epsilon string must be \"eps_star\", got {name:?}");
            }
        }
        if let Some(sweep) = &self.run.epsilon_sweep {
            if sweep.is_empty() {
                bail!("run.epsilon_sweep must be nonempty when present");
            }
        }
        if let Some(sweep) = &self.run.omega_sweep {
            if sweep.is_empty() {
                bail!("run.omega_sweep must be nonempty when present");
            }
            for omega in sweep {
                if omega.len() != self.model.dimension {
                    bail!("omega_sweep entry has wrong dimension");
                }
            }
        }
        Ok(())
    }

    pub fn base_point(&self) -> Option<MultiIndex> {
        self.model
            .base_point
            .as_ref()
            .map(|c| MultiIndex::new(c.clone()))
    }
}
