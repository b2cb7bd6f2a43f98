use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::WeightRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SyntheticRpca,
    MnistRpca,
    EuclidQuadratic,
    AgreementOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every agent starts from the same random point.
    #[default]
    Shared,
    PerAgent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Msd,
    FrechetVariance,
    ConsensusBias,
    Cost,
    GradNormSq,
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub agents: usize,
    pub n: usize,
    pub p: usize,
    pub horizon: usize,
    pub mc_runs: usize,
    pub mu: f64,
    pub alpha: f64,
    pub delta: f64,
    pub graph: WeightRule,
    pub edge_prob: f64,
    /// Draw a fresh graph and weights for every Monte Carlo run.
    pub redraw_topology: bool,
    pub seed: u64,
    pub init_mode: InitMode,
    /// Geodesic radius of the ball around a shared random point from which
    /// per-agent initial points are drawn.
    pub init_spread: f64,
    pub metrics: BTreeSet<MetricName>,
    pub output_path: PathBuf,
    /// Outliers per agent for the synthetic problem.
    pub outliers: usize,
    /// Ratio of consecutive singular values of the synthetic data.
    pub spectrum: f64,
    /// Multiplier applied to the clean synthetic samples before outliers are
    /// injected. 1 keeps the prescribed spectrum.
    pub data_scale: f64,
    /// Gradient noise level of the quadratic testbed.
    pub noise: f64,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::SyntheticRpca,
            agents: 20,
            n: 10,
            p: 5,
            horizon: 1500,
            mc_runs: 20,
            mu: 0.12,
            alpha: 0.4,
            delta: 0.1,
            graph: WeightRule::Metropolis,
            edge_prob: 0.2,
            redraw_topology: false,
            seed: 0,
            init_mode: InitMode::Shared,
            init_spread: 0.5,
            metrics: [MetricName::Msd, MetricName::FrechetVariance].into(),
            output_path: PathBuf::from("out"),
            outliers: 100,
            spectrum: 0.8,
            data_scale: 1.0,
            noise: 0.1,
            mnist_images: None,
            mnist_labels: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    SyntheticMetropolis,
    SyntheticUniform,
    MnistMetropolis,
    MnistUniform,
    EuclidQuadratic,
    Agreement,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::SyntheticMetropolis,
        Preset::SyntheticUniform,
        Preset::MnistMetropolis,
        Preset::MnistUniform,
        Preset::EuclidQuadratic,
        Preset::Agreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SyntheticMetropolis => "synthetic-metropolis",
            Preset::SyntheticUniform => "synthetic-uniform",
            Preset::MnistMetropolis => "mnist-metropolis",
            Preset::MnistUniform => "mnist-uniform",
            Preset::EuclidQuadratic => "euclid-quadratic",
            Preset::Agreement => "agreement",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        let base = ExperimentConfig::default();
        match self {
            Preset::SyntheticMetropolis => base,
            Preset::SyntheticUniform => ExperimentConfig {
                graph: WeightRule::Uniform,
                mu: 0.13,
                ..base
            },
            Preset::MnistMetropolis => ExperimentConfig {
                experiment: ExperimentKind::MnistRpca,
                n: 784,
                horizon: 3000,
                mu: 0.006,
                alpha: 0.005,
                ..base
            },
            Preset::MnistUniform => ExperimentConfig {
                experiment: ExperimentKind::MnistRpca,
                graph: WeightRule::Uniform,
                n: 784,
                horizon: 3000,
                mu: 0.006,
                alpha: 0.001,
                ..base
            },
            Preset::EuclidQuadratic => ExperimentConfig {
                experiment: ExperimentKind::EuclidQuadratic,
                agents: 10,
                n: 5,
                p: 1,
                horizon: 2000,
                mu: 0.05,
                alpha: 0.5,
                metrics: [
                    MetricName::Msd,
                    MetricName::FrechetVariance,
                    MetricName::Cost,
                    MetricName::GradNormSq,
                ]
                .into(),
                ..base
            },
            Preset::Agreement => ExperimentConfig {
                experiment: ExperimentKind::AgreementOnly,
                horizon: 200,
                init_mode: InitMode::PerAgent,
                metrics: [MetricName::FrechetVariance, MetricName::ConsensusBias].into(),
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::config(
                    "preset",
                    format!("unknown preset `{s}`, expected one of {}", known.join(", ")),
                )
            })
    }
}

impl ExperimentConfig {
    /// Parses a TOML or JSON document (chosen by extension, TOML otherwise).
    /// Missing keys take their defaults.
    pub fn from_path(path: &Path) -> Result<Self> {
        Self::default().with_file(path)
    }

    /// Overrides fields of `self` with the keys present in a file.
    pub fn with_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let doc: serde_json::Value = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::config("<document>", e.to_string()))?
        } else {
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::config("<document>", e.message().to_string()))?;
            serde_json::to_value(table).map_err(|e| Error::config("<document>", e.to_string()))?
        };
        let serde_json::Value::Object(map) = doc else {
            return Err(Error::config("<document>", "expected a table of keys"));
        };
        self.merged(map)
    }

    /// Overrides fields of `self` with `values`, checking each key on its own
    /// so that errors name the offending key.
    pub fn merged(&self, values: serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        let serde_json::Value::Object(base) =
            serde_json::to_value(self).expect("config serializes")
        else {
            unreachable!("config serializes to an object")
        };
        let mut merged = base.clone();
        for (key, value) in values {
            if !base.contains_key(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            let mut trial = base.clone();
            trial.insert(key.clone(), value.clone());
            if let Err(e) = serde_json::from_value::<Self>(serde_json::Value::Object(trial)) {
                return Err(Error::config(key, e.to_string()));
            }
            merged.insert(key, value);
        }
        let config: Self = serde_json::from_value(serde_json::Value::Object(merged))
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("agents", self.agents)?;
        positive("n", self.n)?;
        positive("p", self.p)?;
        positive("horizon", self.horizon)?;
        positive("mc_runs", self.mc_runs)?;
        if self.p > self.n {
            return Err(Error::config(
                "p",
                format!("p = {} exceeds n = {}", self.p, self.n),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(
                "mu",
                format!("must be positive, got {}", self.mu),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(
                "alpha",
                format!("must lie in (0, 1], got {}", self.alpha),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(
                "delta",
                format!("must be positive, got {}", self.delta),
            ));
        }
        if !(self.edge_prob >= 0.0 && self.edge_prob <= 1.0) {
            return Err(Error::config(
                "edge_prob",
                format!("must lie in [0, 1], got {}", self.edge_prob),
            ));
        }
        if !(self.spectrum > 0.0 && self.spectrum < 1.0) {
            return Err(Error::config(
                "spectrum",
                format!("must lie in (0, 1), got {}", self.spectrum),
            ));
        }
        if !(self.data_scale > 0.0 && self.data_scale.is_finite()) {
            return Err(Error::config(
                "data_scale",
                format!("must be positive, got {}", self.data_scale),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(
                "noise",
                format!("must be nonnegative, got {}", self.noise),
            ));
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::config(
                "init_spread",
                format!("must be nonnegative, got {}", self.init_spread),
            ));
        }
        if self.metrics.is_empty() {
            return Err(Error::config("metrics", "at least one metric is required"));
        }
        match self.experiment {
            ExperimentKind::SyntheticRpca => {
                if self.outliers > self.horizon {
                    return Err(Error::config(
                        "outliers",
                        format!(
                            "{} outliers exceed the horizon {}",
                            self.outliers, self.horizon
                        ),
                    ));
                }
                if self.agents * self.horizon < self.n {
                    return Err(Error::config(
                        "horizon",
                        "fewer samples than the ambient dimension",
                    ));
                }
            }
            ExperimentKind::MnistRpca => {
                if self.mnist_images.is_none() {
                    return Err(Error::config(
                        "mnist_images",
                        "path to the IDX image file is required",
                    ));
                }
            }
            ExperimentKind::AgreementOnly => {
                for m in [MetricName::Msd, MetricName::Cost, MetricName::GradNormSq] {
                    if self.metrics.contains(&m) {
                        return Err(Error::config(
                            "metrics",
                            format!("{m:?} is undefined for an agreement-only experiment"),
                        ));
                    }
                }
            }
            ExperimentKind::EuclidQuadratic => {}
        }
        Ok(())
    }

    pub fn wants(&self, metric: MetricName) -> bool {
        self.metrics.contains(&metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let c = Preset::SyntheticMetropolis.config();
        assert_eq!((c.agents, c.n, c.p, c.horizon), (20, 10, 5, 1500));
        assert_eq!((c.mu, c.alpha, c.delta), (0.12, 0.4, 0.1));
        assert_eq!(c.mc_runs, 20);
        let u = Preset::SyntheticUniform.config();
        assert_eq!((u.mu, u.alpha, u.graph), (0.13, 0.4, WeightRule::Uniform));
        let m = Preset::MnistMetropolis.config();
        assert_eq!(
            (m.n, m.p, m.mu, m.alpha, m.horizon),
            (784, 5, 0.006, 0.005, 3000)
        );
        assert_eq!(Preset::MnistUniform.config().alpha, 0.001);
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn presets_validate_except_missing_mnist_path() {
        for p in Preset::ALL {
            let r = p.config().validate();
            match p {
                Preset::MnistMetropolis | Preset::MnistUniform => assert!(r.is_err()),
                _ => r.unwrap(),
            }
        }
    }

    #[test]
    fn toml_and_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(
            &toml_path,
            "experiment = \"euclid_quadratic\"\nagents = 4\nmu = 0.2\nmetrics = [\"msd\"]\n",
        )
        .unwrap();
        let c = ExperimentConfig::from_path(&toml_path).unwrap();
        assert_eq!(
            (c.experiment, c.agents, c.mu),
            (ExperimentKind::EuclidQuadratic, 4, 0.2)
        );
        assert_eq!(c.alpha, 0.4);

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::from_path(&json_path).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let key = |text: &str| {
            std::fs::write(&path, text).unwrap();
            match ExperimentConfig::from_path(&path).unwrap_err() {
                Error::Config { key, .. } => key,
                other => panic!("{other}"),
            }
        };
        assert_eq!(key("agnets = 3\n"), "agnets");
        assert_eq!(key("mu = -1.0\n"), "mu");
        assert_eq!(key("mc_runs = 0\n"), "mc_runs");
        assert_eq!(key("metrics = []\n"), "metrics");
        assert_eq!(key("graph = \"ring\"\n"), "graph");
        assert_eq!(key("mu = \"fast\"\n"), "mu");
    }
}
