use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use vpl_core::solver::SolverConfig;

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("slab-eps1e-3", include_str!("../scenarios/slab-eps1e-3.toml")),
    ("slab-full-n12", include_str!("../scenarios/slab-full-n12.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for the parallel backend; results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/out")
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow!("{origin}: {e}"))?;
        cfg.solver.validate().map_err(|e| anyhow!("{origin}: [solver] {e}"))?;
        Ok(cfg)
    }

    /// A bundled scenario name or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == spec) {
            return Self::parse(text, spec);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).with_context(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            format!("cannot read config {spec:?} (bundled scenarios: {})", names.join(", "))
        })?;
        Self::parse(&text, spec)
    }

    /// The resolved configuration, as written next to the run's outputs.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let cfg = RunConfig::load(name).unwrap();
            assert_eq!(cfg.scenario, name);
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::load("slab-eps1e-3").unwrap();
        let again = RunConfig::parse(&cfg.to_toml().unwrap(), "echo").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("scenario = \"x\"\n[solver]\nn_axes = 12\n", "bad.toml").unwrap_err();
        assert!(err.to_string().contains("n_axes"), "{err}");
    }
}
