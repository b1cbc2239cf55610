//! Experiment configuration, read from TOML.
//!
//! Every section except `kind`, `seeds` and `output_dir` has desk-scale
//! defaults; unknown keys anywhere are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClusterTaskConfig, SynthPoolConfig};
use crate::error::{Error, Result};
use crate::mitigations::FisherLabels;
use crate::nn::{ArchSpec, OptimizerConfig};
use crate::numeric::fnv1a;
use crate::probes::LinearProbeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Anatomy,
    Mitigation,
    SemanticsSetup1,
    SemanticsSetup2,
    OtherCategory,
    MixupSweep,
    SuperclassShift,
    FrozenAnalytic,
    RotationSweep,
    WidthSweep,
    Headfirst,
    TaskSpecific,
    ResetRetrain,
    LinearProbe,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 14] = [
        ExperimentKind::Anatomy,
        ExperimentKind::Mitigation,
        ExperimentKind::SemanticsSetup1,
        ExperimentKind::SemanticsSetup2,
        ExperimentKind::OtherCategory,
        ExperimentKind::MixupSweep,
        ExperimentKind::SuperclassShift,
        ExperimentKind::FrozenAnalytic,
        ExperimentKind::RotationSweep,
        ExperimentKind::WidthSweep,
        ExperimentKind::Headfirst,
        ExperimentKind::TaskSpecific,
        ExperimentKind::ResetRetrain,
        ExperimentKind::LinearProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Anatomy => "anatomy",
            ExperimentKind::Mitigation => "mitigation",
            ExperimentKind::SemanticsSetup1 => "semantics-setup1",
            ExperimentKind::SemanticsSetup2 => "semantics-setup2",
            ExperimentKind::OtherCategory => "other-category",
            ExperimentKind::MixupSweep => "mixup-sweep",
            ExperimentKind::SuperclassShift => "superclass-shift",
            ExperimentKind::FrozenAnalytic => "frozen-analytic",
            ExperimentKind::RotationSweep => "rotation-sweep",
            ExperimentKind::WidthSweep => "width-sweep",
            ExperimentKind::Headfirst => "headfirst",
            ExperimentKind::TaskSpecific => "task-specific",
            ExperimentKind::ResetRetrain => "reset-retrain",
            ExperimentKind::LinearProbe => "linear-probe",
        }
    }

    /// Kinds whose two tasks come from the `[task]` section.
    pub fn uses_task_section(self) -> bool {
        !matches!(
            self,
            ExperimentKind::SemanticsSetup1
                | ExperimentKind::SemanticsSetup2
                | ExperimentKind::OtherCategory
                | ExperimentKind::MixupSweep
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
    Cifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Overrides the dataset-root environment variable.
    pub root: Option<PathBuf>,
    /// Keep at most this many training examples per class (real datasets).
    pub max_train_per_class: Option<usize>,
    pub max_test_per_class: Option<usize>,
    /// Fit per-channel standardization on task-1 train and apply it to both tasks.
    pub standardize: bool,
    pub synthetic: SynthPoolConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            root: None,
            max_train_per_class: None,
            max_test_per_class: None,
            standardize: true,
            synthetic: SynthPoolConfig::default(),
        }
    }
}

/// How the two tasks are carved out of the pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Split {
        classes1: Vec<String>,
        classes2: Vec<String>,
    },
    SuperclassShift {
        superclasses: Vec<String>,
        subclasses1: BTreeMap<String, Vec<String>>,
        subclasses2: BTreeMap<String, Vec<String>>,
    },
    Cluster(ClusterTaskConfig),
}

impl Default for TaskSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect();
        TaskSpec::Split {
            classes1: s(&["airplane", "automobile", "bird", "cat", "deer"]),
            classes2: s(&["dog", "frog", "horse", "ship", "truck"]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epochs {
    pub task1: usize,
    pub task2: usize,
}

impl Epochs {
    /// Epoch counts used for full-size split CIFAR-10 runs.
    pub const CIFAR10_FULL: Epochs = Epochs { task1: 30, task2: 30 };
    /// Epoch counts used for full-size CIFAR-100 runs.
    pub const CIFAR100_FULL: Epochs = Epochs { task1: 60, task2: 60 };
}

impl Default for Epochs {
    fn default() -> Self {
        Self { task1: 20, task2: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MitigationConfig {
    pub replay_fractions: Vec<f64>,
    /// Buffer size as a fraction of the task-1 training set.
    pub replay_capacity: f64,
    pub ewc_lambdas: Vec<f64>,
    pub fisher_samples: usize,
    pub fisher_labels: FisherLabels,
    pub headfirst_epochs: Vec<usize>,
    pub task_specific_stages: Vec<usize>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            replay_fractions: vec![0.0, 0.1, 0.25, 0.5],
            replay_capacity: 0.1,
            ewc_lambdas: vec![0.0, 1.0, 10.0, 100.0],
            fisher_samples: 200,
            fisher_labels: FisherLabels::Sampled,
            headfirst_epochs: vec![0, 5],
            task_specific_stages: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Freezing sweep arms; empty means every k from 0 to the stage count.
    pub freeze_k: Vec<usize>,
    /// Reset sweep block sizes; empty means every n from 0 to the stage count.
    pub reset_n: Vec<usize>,
    /// Reset-and-retrain arms (number of bottom stages kept at post-task-2 values).
    pub retrain_frozen: Vec<usize>,
    pub retrain_epochs: usize,
    pub linear: LinearProbeConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            freeze_k: Vec::new(),
            reset_n: Vec::new(),
            retrain_frozen: Vec::new(),
            retrain_epochs: 10,
            linear: LinearProbeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemanticsConfig {
    pub task1: Vec<String>,
    /// Second-task arms by name.
    pub second: BTreeMap<String, Vec<String>>,
    pub lambdas: Vec<f64>,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
        Self {
            task1: s(&["cat", "horse"]),
            second: BTreeMap::from([
                ("animals".to_string(), s(&["deer", "dog"])),
                ("objects".to_string(), s(&["ship", "truck"])),
            ]),
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticConfig {
    pub learning_rate: f64,
    /// Full-batch head steps on task 1 before the task-2 simulation.
    pub task1_steps: usize,
    pub steps: usize,
    /// Mini-batch size; full batch when absent.
    pub batch: Option<usize>,
    /// Stage whose output serves as features; the last stage when absent.
    pub tap: Option<usize>,
    /// Rotation angles in radians.
    pub thetas: Vec<f64>,
    /// Multi-head phase lengths: head-only steps, then linear-layer steps.
    pub multihead_head_steps: usize,
    pub multihead_body_steps: usize,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        let q = std::f64::consts::FRAC_PI_8;
        Self {
            learning_rate: 0.05,
            task1_steps: 300,
            steps: 300,
            batch: None,
            tap: None,
            thetas: vec![0.0, q, 2.0 * q, 3.0 * q, 4.0 * q],
            multihead_head_steps: 50,
            multihead_body_steps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WidthConfig {
    pub multipliers: Vec<f64>,
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self {
            multipliers: vec![1.0, 2.0, 4.0],
        }
    }
}

fn default_arch() -> ArchSpec {
    ArchSpec::mlp(32, &[64, 64, 64, 64, 64])
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        learning_rate: 0.01,
        momentum: 0.9,
        weight_decay: 1e-4,
        batch_size: 32,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_arch")]
    pub arch: ArchSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub epochs: Epochs,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub semantics: SemanticsConfig,
    #[serde(default)]
    pub analytic: AnalyticConfig,
    #[serde(default)]
    pub width: WidthConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn new(kind: ExperimentKind, seeds: Vec<u64>, output_dir: impl Into<PathBuf>) -> Self {
        let mut cfg = Self {
            kind,
            seeds,
            output_dir: output_dir.into(),
            arch: default_arch(),
            data: DataConfig::default(),
            task: TaskSpec::default(),
            optimizer: default_optimizer(),
            epochs: Epochs::default(),
            mitigation: MitigationConfig::default(),
            probe: ProbeConfig::default(),
            semantics: SemanticsConfig::default(),
            analytic: AnalyticConfig::default(),
            width: WidthConfig::default(),
        };
        if kind == ExperimentKind::SuperclassShift {
            cfg.task = default_superclass_task();
            cfg.data.source = DataSource::Synthetic;
        }
        if kind == ExperimentKind::SemanticsSetup2 {
            let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
            cfg.semantics.task1 = s(&["cat", "horse", "ship", "truck"]);
            cfg.semantics.second = BTreeMap::from([
                ("animals".to_string(), s(&["deer", "dog"])),
                ("objects".to_string(), s(&["airplane", "automobile"])),
            ]);
        }
        if matches!(kind, ExperimentKind::OtherCategory | ExperimentKind::MixupSweep) {
            let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
            cfg.semantics.task1 = s(&["cat", "horse"]);
            cfg.semantics.second = BTreeMap::from([("objects".to_string(), s(&["ship", "truck"]))]);
        }
        cfg
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into()),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Hash of the canonical TOML, as 16 hex digits.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        self.arch.validate()?;
        self.optimizer.validate()?;
        self.data.synthetic.validate()?;
        if self.data.source == DataSource::Synthetic && self.arch.input_len() != self.data.synthetic.dim {
            if !matches!(self.task, TaskSpec::Cluster(_)) || !self.kind.uses_task_section() {
                return Err(Error::config(
                    "arch.input_shape",
                    format!(
                        "network takes {} inputs but synthetic data has {}",
                        self.arch.input_len(),
                        self.data.synthetic.dim
                    ),
                ));
            }
        }
        let m = &self.mitigation;
        if m.replay_fractions.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("mitigation.replay_fractions", "must lie in [0, 1]"));
        }
        if !(m.replay_capacity > 0.0 && m.replay_capacity <= 1.0) {
            return Err(Error::config("mitigation.replay_capacity", "must lie in (0, 1]"));
        }
        if m.ewc_lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config("mitigation.ewc_lambdas", "must be finite and non-negative"));
        }
        if m.fisher_samples == 0 {
            return Err(Error::config("mitigation.fisher_samples", "must be positive"));
        }
        let stages = self.arch.stage_count();
        for (field, vals) in [
            ("probe.freeze_k", &self.probe.freeze_k),
            ("probe.reset_n", &self.probe.reset_n),
            ("probe.retrain_frozen", &self.probe.retrain_frozen),
            ("mitigation.task_specific_stages", &self.mitigation.task_specific_stages),
        ] {
            if vals.iter().any(|&v| v > stages) {
                return Err(Error::config(field, format!("values must not exceed the {stages} stages")));
            }
        }
        if self.semantics.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("semantics.lambdas", "must lie in [0, 1]"));
        }
        for name in self.semantics.second.keys() {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::config("semantics.second", format!("arm name `{name}` must be [A-Za-z0-9_-]+")));
            }
        }
        if !self.kind.uses_task_section() && (self.semantics.task1.is_empty() || self.semantics.second.is_empty()) {
            return Err(Error::config("semantics", "needs task1 classes and at least one second task"));
        }
        let a = &self.analytic;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::config("analytic.learning_rate", "must be positive"));
        }
        if a.batch == Some(0) {
            return Err(Error::config("analytic.batch", "must be positive"));
        }
        if a.tap.is_some_and(|t| t >= stages) {
            return Err(Error::config("analytic.tap", "must name an existing stage"));
        }
        if self.width.multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::config("width.multipliers", "must be positive"));
        }
        Ok(())
    }
}

fn default_superclass_task() -> TaskSpec {
    let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    let supers = s(&[
        "household_electrical_devices",
        "food_containers",
        "large_carnivores",
        "vehicles_2",
        "medium_mammals",
        "small_mammals",
    ]);
    let first = [
        ["clock", "television"],
        ["bottle", "bowl"],
        ["bear", "leopard"],
        ["lawn_mower", "rocket"],
        ["fox", "porcupine"],
        ["hamster", "mouse"],
    ];
    let mut second = first;
    second[4] = ["possum", "raccoon"];
    second[5] = ["shrew", "squirrel"];
    let map = |subs: &[[&str; 2]; 6]| {
        supers
            .iter()
            .zip(subs)
            .map(|(k, v)| (k.clone(), s(v)))
            .collect::<BTreeMap<_, _>>()
    };
    TaskSpec::SuperclassShift {
        subclasses1: map(&first),
        subclasses2: map(&second),
        superclasses: supers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse("kind = \"anatomy\"\nseeds = [0, 1]\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(c.arch.stage_count(), 5);
        assert_eq!(c.epochs, Epochs::default());
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::Anatomy, vec![0, 1], "out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "kind = \"anatomy\"\nseeds = [0]\noutput_dir = \"o\"\ncolour = 3\n";
        assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Config { .. })));
        let nested = "kind = \"anatomy\"\nseeds = [0]\noutput_dir = \"o\"\n[optimizer]\nlearning_rate = 0.1\nbatch_size = 8\nnesterov = true\n";
        assert!(ExperimentConfig::parse(nested).is_err());
    }

    #[test]
    fn round_trip_is_idempotent() {
        for kind in ExperimentKind::ALL {
            let c = ExperimentConfig::new(kind, vec![3], "out");
            let text = c.to_toml().unwrap();
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(back, c, "{}", kind.name());
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn cluster_task_section() {
        let text = "kind = \"anatomy\"\nseeds = [0]\noutput_dir = \"o\"\n[arch]\nkind = \"mlp\"\ninput_shape = [16]\nwidths = [8, 8]\n[task]\nbuilder = \"cluster\"\nclasses = 2\nmodes_per_class = 2\ndim = 16\nseparation = 0.5\nmode_scale = 3.0\nnoise = 0.5\ntrain_per_class = 10\ntest_per_class = 10\nhead_mode = \"multi-head\"\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert!(matches!(c.task, TaskSpec::Cluster(ref t) if t.separation == 0.5));
    }

    #[test]
    fn invalid_values() {
        let mut c = ExperimentConfig::new(ExperimentKind::Mitigation, vec![0], "o");
        c.mitigation.replay_fractions = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(ExperimentKind::Anatomy, vec![0, 0], "o");
        assert!(c.validate().is_err());
        c.seeds = vec![0];
        c.probe.freeze_k = vec![6];
        assert!(c.validate().is_err());
    }
}
