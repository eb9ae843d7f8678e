//! TOML run configuration. Sections mirror the library's configuration
//! types field for field; unknown keys are rejected.

use std::path::Path;

use depnet::bench::Method;
use depnet::{FitConfig, LayerFilters, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::read_text;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub n_replicates: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub seed: Option<u64>,
    /// Correlation densities for the sweep preset.
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub min_degree: Option<usize>,
    pub filters: Option<LayerFilters>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub simulation: Option<SimConfig>,
    pub fit: Option<FitConfig>,
    pub bench: Option<BenchSection>,
    pub ingest: Option<IngestSection>,
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string().trim_end().to_string(),
        })?;
        let invalid = |e: depnet::Error| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        };
        if let Some(sim) = &cfg.simulation {
            sim.validate().map_err(invalid)?;
        }
        if let Some(fit) = &cfg.fit {
            fit.validate().map_err(invalid)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::parse(path, &read_text(path)?)
    }

    /// Loads `path` if given, otherwise an empty configuration.
    pub fn load_opt(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use depnet::simulator::Balance;
    use depnet::CorrelationOrder;

    fn parse(text: &str) -> CliResult<RunConfig> {
        RunConfig::parse(Path::new("run.toml"), text)
    }

    #[test]
    fn simulation_section_round_trips() {
        let sim = SimConfig::weak_signal(Balance::Balanced, 40, 0.6, 7);
        let cfg = RunConfig {
            simulation: Some(sim.clone()),
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap().simulation.unwrap(), sim);
    }

    #[test]
    fn partial_fit_section_uses_defaults() {
        let cfg = parse("[fit]\nk = 3\norder = \"fourth\"\nseed = 5\n").unwrap();
        let fit = cfg.fit.unwrap();
        assert_eq!(fit.k, 3);
        assert_eq!(fit.order, CorrelationOrder::Fourth);
        assert_eq!(fit.seed, 5);
        assert_eq!(fit.max_iters, FitConfig::default().max_iters);
    }

    #[test]
    fn unknown_keys_are_named_with_their_line() {
        let err = parse("[fit]\nk = 2\nepsilonn = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("epsilonn") && err.contains("line 3"), "{err}");
        let err = parse("[fitting]\n").unwrap_err().to_string();
        assert!(err.contains("fitting"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = parse("[fit]\nepsilon = -1.0\n").unwrap_err().to_string();
        assert!(err.contains("epsilon"), "{err}");
    }
}
