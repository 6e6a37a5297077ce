//! Run configuration: one TOML tree with a block per module.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use limitflow_core::semigroup::{EnsembleConfig, TrotterConfig};
use limitflow_models::classical_limit::{
    ClassicalConfig, GaussianBump, HeatConfig, PhaseGrid,
};
use limitflow_models::diagnostics::DiagnosticsConfig;
use limitflow_models::fermion_rg::FermionConfig;
use limitflow_models::mean_field::MeanFieldConfig;
use limitflow_models::spin_chain::SpinConfig;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassicalKind {
    All,
    Heat,
    Ho,
    Lindblad,
}

/// Classical-limit parameters shared by the heat, oscillator and Lindblad runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalBlock {
    pub kind: ClassicalKind,
    pub hbar_chain: Vec<f64>,
    pub cutoffs: Vec<usize>,
    /// Cutoffs of the Lindblad run, which builds the dense superoperator.
    pub lindblad_cutoffs: Vec<usize>,
    pub soft_chain: Vec<f64>,
    pub soft_cutoffs: Vec<usize>,
    pub grid: PhaseGrid,
    /// Gaussian probes; the first one is also the evolved initial density.
    pub bumps: Vec<GaussianBump>,
    pub t_grid: Vec<f64>,
    /// Damping rate of the Lindblad spec.
    pub alpha: f64,
}

impl Default for ClassicalBlock {
    fn default() -> Self {
        let heat = HeatConfig::default();
        let dynamics = ClassicalConfig::default();
        Self {
            kind: ClassicalKind::All,
            hbar_chain: heat.hbar_chain,
            cutoffs: heat.cutoffs,
            lindblad_cutoffs: ClassicalConfig::lindblad().cutoffs,
            soft_chain: heat.soft_chain,
            soft_cutoffs: heat.soft_cutoffs,
            grid: heat.grid,
            bumps: heat.bumps,
            t_grid: vec![dynamics.t],
            alpha: dynamics.alpha,
        }
    }
}

impl ClassicalBlock {
    pub fn heat(&self) -> HeatConfig {
        HeatConfig {
            hbar_chain: self.hbar_chain.clone(),
            cutoffs: self.cutoffs.clone(),
            soft_chain: self.soft_chain.clone(),
            soft_cutoffs: self.soft_cutoffs.clone(),
            grid: self.grid,
            bumps: self.bumps.clone(),
        }
    }

    pub fn dynamics(&self, t: f64, lindblad: bool) -> Result<ClassicalConfig, RunError> {
        let bump = *self.bumps.first().ok_or_else(|| RunError::Config("classical_limit.bumps is empty".into()))?;
        let cutoffs = if lindblad { self.lindblad_cutoffs.clone() } else { self.cutoffs.clone() };
        Ok(ClassicalConfig { hbar_chain: self.hbar_chain.clone(), cutoffs, grid: self.grid, bump, t, alpha: self.alpha })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registry id or subcommand name run by `limitflow run`.
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Tolerance overrides keyed by experiment id.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub evolution_check: EnsembleConfig,
    #[serde(default)]
    pub trotter: TrotterConfig,
    #[serde(default)]
    pub classical_limit: ClassicalBlock,
    #[serde(default)]
    pub mean_field: MeanFieldConfig,
    #[serde(default)]
    pub spin_chain: SpinConfig,
    #[serde(default)]
    pub fermion_rg: FermionConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        for id in cfg.tolerances.keys() {
            crate::registry::lookup(id)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn require_seed(&self) -> Result<u64, RunError> {
        self.seed.ok_or_else(|| RunError::Config("a seed is required (config key `seed` or --seed)".into()))
    }

    /// SHA-256 of the canonical JSON form of the effective configuration,
    /// output directory excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&RunConfig { out: None, ..self.clone() }).expect("configs serialize");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = RunConfig::parse("seed = 3\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.classical_limit.hbar_chain, vec![0.4, 0.2, 0.1]);
        assert_eq!(cfg.mean_field.n_max, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("seed = 1\nsede = 2\n"), Err(RunError::Config(_))));
        assert!(RunConfig::parse("seed = 1\n[spin_chain]\nJ = 1.0\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[spin_chain.model]\nJ = 1.0\ng = 0.5\n").is_ok());
        assert!(RunConfig::parse("seed = 1\n[tolerances]\nnope = 1e-3\n").is_err());
    }

    #[test]
    fn nested_blocks_parse() {
        let text = "seed = 9\n[mean_field]\nN_max = 6\nexperiment = \"product-defect\"\n\
                    [classical_limit]\nkind = \"heat\"\nhbar_chain = [0.4, 0.2, 0.1]\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.mean_field.n_max, 6);
        assert_eq!(cfg.classical_limit.kind, ClassicalKind::Heat);
    }

    #[test]
    fn custom_filter_taps_parse() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let text = format!("seed = 1\n[fermion_rg.filter.custom-taps]\ntaps = [[{h}, 0.0], [{h}, 0.0]]\n");
        let cfg = RunConfig::parse(&text).unwrap();
        assert!(cfg.fermion_rg.filter.resolve().is_ok());
        let skewed = "seed = 1\n[fermion_rg.filter.custom-taps]\ntaps = [[1.0, 0.0], [1.0, 0.0]]\n";
        assert!(RunConfig::parse(skewed).unwrap().fermion_rg.filter.resolve().is_err());
        assert!(RunConfig::parse("seed = 1\n[fermion_rg]\nfilter = \"d6\"\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse("seed = 1\n").unwrap();
        let b = RunConfig::parse("seed = 2\n").unwrap();
        assert_eq!(a.hash(), RunConfig::parse("seed = 1\n").unwrap().hash());
        assert_ne!(a.hash(), b.hash());
        let moved = RunConfig { out: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(moved.hash(), a.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
