use std::path::PathBuf;

use affect_risk::eval::{SplitPolicy, TargetKind};
use affect_risk::features::default_interactions;
use affect_risk::gbt::GbtHyperparams;
use affect_risk::ingest::{default_markers, Horizon};
use affect_risk::physics::AcousticConstants;
use affect_risk::piam::{TrainHyper, WaveConfig};
use affect_risk::synthgen::PlantSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed, copied into every seeded section when resolved.
    pub seed: u64,
    pub paths: Paths,
    pub features: FeatureOptions,
    pub gbt: GbtHyperparams,
    pub eval: EvalOptions,
    pub physics: AcousticConstants<f64>,
    pub piam: PiamOptions,
    pub synth: PlantSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    pub interactions: Vec<(String, String)>,
    pub qa_markers: Vec<String>,
    /// Replacement emotion coordinates; needs `--unsafe-asl-override`.
    pub asl_override: Option<PathBuf>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            interactions: default_interactions(),
            qa_markers: default_markers(),
            asl_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub split: SplitPolicy,
    pub iterations: usize,
    pub importance_iterations: usize,
    pub importance_estimators: usize,
    pub horizons: Vec<Horizon>,
    pub target_horizon: Horizon,
    pub target_kind: TargetKind,
    pub top_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: SplitPolicy::default(),
            iterations: 50,
            importance_iterations: 100,
            importance_estimators: 50,
            horizons: Horizon::ALL.to_vec(),
            target_horizon: Horizon::D30,
            target_kind: TargetKind::RealizedVol,
            top_k: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiamOptions {
    pub wave: WaveConfig,
    /// `train.lambda` is the regularized arm; the control arm uses 0.
    pub train: TrainHyper,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: usize,
    pub gradcheck_instances: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for PiamOptions {
    fn default() -> Self {
        Self {
            wave: WaveConfig::default(),
            train: TrainHyper::default(),
            n_train: 200,
            n_test: 70,
            seeds: 10,
            gradcheck_instances: 100,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-5,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            features: FeatureOptions::default(),
            gbt: GbtHyperparams::default(),
            eval: EvalOptions::default(),
            physics: AcousticConstants::default(),
            piam: PiamOptions::default(),
            synth: PlantSpec::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub horizons: Option<Vec<u32>>,
    pub iterations: Option<usize>,
    pub top_k: Option<usize>,
    pub n_calls: Option<usize>,
    pub seeds: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }

    /// Applies overrides, propagates the master seed and checks every section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.paths.out = p.clone();
        }
        if let Some(p) = &o.corpus {
            self.paths.corpus = Some(p.clone());
        }
        if let Some(hs) = &o.horizons {
            self.eval.horizons = hs
                .iter()
                .map(|&d| {
                    Horizon::from_days(d)
                        .ok_or_else(|| config_err(format!("unsupported horizon {d} (allowed: 1, 7, 30)")))
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(n) = o.iterations {
            self.eval.iterations = n;
            self.eval.importance_iterations = n;
        }
        if let Some(k) = o.top_k {
            self.eval.top_k = k;
        }
        if let Some(n) = o.n_calls {
            self.synth.n_calls = n;
        }
        if let Some(n) = o.seeds {
            self.piam.seeds = n;
        }
        self.gbt.seed = self.seed;
        self.eval.split.seed = self.seed;
        self.piam.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.synth.validate().map_err(|e| config_err(e.to_string()))?;
        self.gbt.validate().map_err(|e| config_err(e.to_string()))?;
        self.physics.validate().map_err(|e| config_err(e.to_string()))?;
        self.piam.wave.validate().map_err(|e| config_err(e.to_string()))?;
        let e = &self.eval;
        if e.iterations == 0 || e.importance_iterations == 0 {
            return Err(config_err("iterations must be positive"));
        }
        if e.importance_estimators == 0 {
            return Err(config_err("importance_estimators must be positive"));
        }
        if e.horizons.is_empty() {
            return Err(config_err("at least one horizon is required"));
        }
        if !(e.split.test_fraction > 0.0 && e.split.test_fraction < 1.0) {
            return Err(config_err("split.test_fraction must lie in (0, 1)"));
        }
        if e.top_k == 0 {
            return Err(config_err("top_k must be positive"));
        }
        if self.features.qa_markers.is_empty() {
            return Err(config_err("qa_markers must not be empty"));
        }
        let p = &self.piam;
        if p.seeds == 0 {
            return Err(config_err("piam.seeds must be positive"));
        }
        if p.n_train < 2 || p.n_test == 0 {
            return Err(config_err("piam.n_train must be at least 2 and n_test positive"));
        }
        if !(p.train.lambda > 0.0) {
            return Err(config_err("piam.train.lambda must be positive (the control arm uses 0)"));
        }
        if p.gradcheck_instances == 0 || !(p.gradcheck_step > 0.0) || !(p.gradcheck_tolerance > 0.0) {
            return Err(config_err("gradcheck settings must be positive"));
        }
        Ok(())
    }
}
