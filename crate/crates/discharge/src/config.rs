//! Pipeline configuration: a sectioned key/value text format with
//! line-precise schema validation.
//!
//! ```text
//! seed = 7
//! [synth]
//! n_patients = 5000
//! [model]
//! kind = gbm2
//! [model.gbm2]
//! n_trees = 200
//! ```
//!
//! Unknown sections or keys are errors; every value names its line when it
//! fails to parse. The seed is mandatory (CLI `--seed` satisfies it too).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::{EmbedMode, TaskSchedule, TrainConfig};
use crate::synth::{CodePools, SynthConfig};
use crate::timeutil::parse_date_or_datetime;
use crate::trees::{FeatureSample, TreeFitParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Gbm1,
    Gbm2,
    Gru,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Gbm1 => "gbm1",
            ModelKind::Gbm2 => "gbm2",
            ModelKind::Gru => "gru",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "forest" => Ok(ModelKind::Forest),
            "gbm1" => Ok(ModelKind::Gbm1),
            "gbm2" => Ok(ModelKind::Gbm2),
            "gru" => Ok(ModelKind::Gru),
            other => Err(Error::config(format!(
                "unknown model kind {other:?} (expected forest, gbm1, gbm2, or gru)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSection {
    pub cutoff: i64,
    pub merge_gap_hours: i64,
    pub remove_validation_from_train: bool,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection {
            cutoff: 1_483_228_800, // 2017-01-01
            merge_gap_hours: 12,
            remove_validation_from_train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSection {
    pub min_count: u32,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection { min_count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruSection {
    pub train: TrainConfig,
    /// Cap on training sequences (seeded subsample); None trains on all.
    pub max_train_patients: Option<usize>,
}

impl Default for GruSection {
    fn default() -> Self {
        GruSection { train: TrainConfig::default(), max_train_patients: Some(600) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    None,
    Gender,
    Race,
    Ethnicity,
    Insurance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSection {
    pub group_by: GroupBy,
    pub calibration_bins: usize,
    pub min_group_size: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            group_by: GroupBy::Insurance,
            calibration_bins: 10,
            min_group_size: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityPrevalence {
    /// The fixed 18% figure.
    Fixed(f64),
    /// Empirical test-split prevalence.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySection {
    pub prevalence: UtilityPrevalence,
}

impl Default for UtilitySection {
    fn default() -> Self {
        UtilitySection { prevalence: UtilityPrevalence::Fixed(0.18) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub cohort: CohortSection,
    pub features: FeaturesSection,
    pub model_kind: ModelKind,
    pub forest: TreeFitParams,
    pub gbm1: TreeFitParams,
    pub gbm2: TreeFitParams,
    pub gru: GruSection,
    pub evaluate: EvaluateSection,
    pub utility: UtilitySection,
}

/// Desk-scale defaults: a full four-model run finishes in minutes while the
/// study-scale hyperparameters remain one config edit away.
impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            synth: SynthConfig { n_patients: 5000, ..SynthConfig::default() },
            cohort: CohortSection::default(),
            features: FeaturesSection::default(),
            model_kind: ModelKind::Gbm2,
            forest: TreeFitParams {
                n_trees: 100,
                max_depth: 1000,
                min_samples_leaf: 1.0,
                min_samples_split: 2.0,
                features_per_split: FeatureSample::Sqrt,
                bootstrap: true,
                ..TreeFitParams::default()
            },
            gbm1: TreeFitParams {
                n_trees: 200,
                max_depth: 4,
                min_samples_leaf: 3.0,
                min_samples_split: 6.0,
                features_per_split: FeatureSample::All,
                subsample: 0.8,
                bootstrap: false,
                learning_rate: 0.1,
                lambda: 0.0,
                ..TreeFitParams::default()
            },
            gbm2: TreeFitParams {
                n_trees: 200,
                max_depth: 4,
                min_samples_leaf: 2.0,
                min_samples_split: 4.0,
                features_per_split: FeatureSample::All,
                subsample: 1.0,
                bootstrap: false,
                learning_rate: 0.3,
                lambda: 1.0,
                ..TreeFitParams::default()
            },
            gru: GruSection::default(),
            evaluate: EvaluateSection::default(),
            utility: UtilitySection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn tree_params(&self, kind: ModelKind) -> Option<&TreeFitParams> {
        match kind {
            ModelKind::Forest => Some(&self.forest),
            ModelKind::Gbm1 => Some(&self.gbm1),
            ModelKind::Gbm2 => Some(&self.gbm2),
            ModelKind::Gru => None,
        }
    }

    /// Propagate the root seed into every per-model seed slot.
    pub fn apply_seed(&mut self) {
        self.synth.seed = self.seed;
        self.forest.seed = self.seed;
        self.gbm1.seed = self.seed;
        self.gbm2.seed = self.seed;
        self.gru.train.seed = self.seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }
}

struct Cursor<'a> {
    section: String,
    key: &'a str,
    value: &'a str,
    line: usize,
}

impl Cursor<'_> {
    fn err(&self, what: impl std::fmt::Display) -> Error {
        Error::config_at(self.line, format!("{what} (key {:?} in [{}])", self.key, self.section))
    }

    fn u64(&self) -> Result<u64> {
        self.value.parse().map_err(|e| self.err(format_args!("expected integer: {e}")))
    }

    fn usize(&self) -> Result<usize> {
        self.value.parse().map_err(|e| self.err(format_args!("expected integer: {e}")))
    }

    fn u32(&self) -> Result<u32> {
        self.value.parse().map_err(|e| self.err(format_args!("expected integer: {e}")))
    }

    fn i64(&self) -> Result<i64> {
        self.value.parse().map_err(|e| self.err(format_args!("expected integer: {e}")))
    }

    fn f64(&self) -> Result<f64> {
        self.value.parse().map_err(|e| self.err(format_args!("expected number: {e}")))
    }

    fn bool(&self) -> Result<bool> {
        match self.value {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.err("expected true/false")),
        }
    }

    fn date(&self) -> Result<i64> {
        parse_date_or_datetime(self.value).map_err(|e| self.err(e))
    }

    fn feature_sample(&self) -> Result<FeatureSample> {
        match self.value {
            "all" => Ok(FeatureSample::All),
            "sqrt" => Ok(FeatureSample::Sqrt),
            v => {
                if let Ok(k) = v.parse::<u32>() {
                    Ok(FeatureSample::Count(k))
                } else if let Ok(f) = v.parse::<f64>() {
                    if f > 0.0 && f <= 1.0 {
                        Ok(FeatureSample::Fraction(f))
                    } else {
                        Err(self.err("feature fraction must be in (0, 1]"))
                    }
                } else {
                    Err(self.err("expected all, sqrt, a count, or a fraction"))
                }
            }
        }
    }
}

fn apply_tree_key(params: &mut TreeFitParams, c: &Cursor) -> Result<bool> {
    match c.key {
        "n_trees" => params.n_trees = c.u32()?,
        "max_depth" => params.max_depth = c.u32()?,
        "min_samples_leaf" => params.min_samples_leaf = c.f64()?,
        "min_samples_split" => params.min_samples_split = c.f64()?,
        "features_per_split" => params.features_per_split = c.feature_sample()?,
        "subsample" => params.subsample = c.f64()?,
        "bootstrap" => params.bootstrap = c.bool()?,
        "learning_rate" => params.learning_rate = c.f64()?,
        "lambda" => params.lambda = c.f64()?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parse and validate configuration text.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    let mut seed_seen = false;
    let mut section = String::new();
    let mut seen_sections: BTreeSet<String> = BTreeSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config_at(line_no, "unterminated section header"))?
                .trim();
            const KNOWN: [&str; 10] = [
                "synth",
                "cohort",
                "features",
                "model",
                "model.forest",
                "model.gbm1",
                "model.gbm2",
                "model.gru",
                "evaluate",
                "utility",
            ];
            if !KNOWN.contains(&name) {
                return Err(Error::config_at(line_no, format!("unknown section [{name}]")));
            }
            if !seen_sections.insert(name.to_string()) {
                return Err(Error::config_at(line_no, format!("duplicate section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config_at(line_no, format!("expected `key = value`, got {line:?}"))
        })?;
        let c = Cursor {
            section: section.clone(),
            key: key.trim(),
            value: value.trim(),
            line: line_no,
        };
        if c.value.is_empty() {
            return Err(c.err("empty value"));
        }

        let known = match section.as_str() {
            "" => match c.key {
                "seed" => {
                    config.seed = c.u64()?;
                    seed_seen = true;
                    true
                }
                "out_dir" => {
                    config.out_dir = PathBuf::from(c.value);
                    true
                }
                _ => false,
            },
            "synth" => match c.key {
                "n_patients" => {
                    config.synth.n_patients = c.usize()?;
                    true
                }
                "range_start" => {
                    config.synth.range_start = c.date()?;
                    true
                }
                "range_end" => {
                    config.synth.range_end = c.date()?;
                    true
                }
                "mean_los_days" => {
                    config.synth.mean_los_days = c.f64()?;
                    true
                }
                "target_prevalence" => {
                    config.synth.target_prevalence = c.f64()?;
                    true
                }
                "signal_strength" => {
                    config.synth.signal_strength = c.f64()?;
                    true
                }
                "pool_diagnosis" => {
                    config.synth.code_pools.diagnosis = c.usize()?;
                    true
                }
                "pool_procedure" => {
                    config.synth.code_pools.procedure = c.usize()?;
                    true
                }
                "pool_medication" => {
                    config.synth.code_pools.medication = c.usize()?;
                    true
                }
                "pool_lab" => {
                    config.synth.code_pools.lab = c.usize()?;
                    true
                }
                _ => false,
            },
            "cohort" => match c.key {
                "cutoff" => {
                    config.cohort.cutoff = c.date()?;
                    true
                }
                "merge_gap_hours" => {
                    config.cohort.merge_gap_hours = c.i64()?;
                    true
                }
                "remove_validation_from_train" => {
                    config.cohort.remove_validation_from_train = c.bool()?;
                    true
                }
                _ => false,
            },
            "features" => match c.key {
                "min_count" => {
                    config.features.min_count = c.u32()?;
                    true
                }
                _ => false,
            },
            "model" => match c.key {
                "kind" => {
                    config.model_kind = ModelKind::parse(c.value).map_err(|e| c.err(e))?;
                    true
                }
                _ => false,
            },
            "model.forest" => apply_tree_key(&mut config.forest, &c)?,
            "model.gbm1" => apply_tree_key(&mut config.gbm1, &c)?,
            "model.gbm2" => apply_tree_key(&mut config.gbm2, &c)?,
            "model.gru" => {
                let t = &mut config.gru.train;
                match c.key {
                    "epochs" => {
                        t.epochs = c.u32()?;
                        true
                    }
                    "learning_rate" => {
                        t.learning_rate = c.f64()?;
                        true
                    }
                    "dropout" => {
                        t.dropout = c.f64()?;
                        true
                    }
                    "hidden" => {
                        t.hidden = c.usize()?;
                        true
                    }
                    "batch_size" => {
                        t.batch_size = c.usize()?;
                        true
                    }
                    "embed_mode" => {
                        t.embed_mode = match c.value {
                            "per_feature_25" => EmbedMode::PerFeature25,
                            "grouped_50" => EmbedMode::Grouped50,
                            _ => return Err(c.err("expected per_feature_25 or grouped_50")),
                        };
                        true
                    }
                    "task_schedule" => {
                        t.task_schedule = match c.value {
                            "round_robin" => TaskSchedule::RoundRobin,
                            "seeded" => TaskSchedule::Seeded,
                            _ => return Err(c.err("expected round_robin or seeded")),
                        };
                        true
                    }
                    "bptt_chunk" => {
                        t.bptt_chunk = match c.value {
                            "off" | "none" => None,
                            _ => Some(c.usize()?),
                        };
                        true
                    }
                    "max_train_patients" => {
                        config.gru.max_train_patients = match c.value {
                            "all" => None,
                            _ => Some(c.usize()?),
                        };
                        true
                    }
                    _ => false,
                }
            }
            "evaluate" => match c.key {
                "group_by" => {
                    config.evaluate.group_by = match c.value {
                        "none" => GroupBy::None,
                        "gender" => GroupBy::Gender,
                        "race" => GroupBy::Race,
                        "ethnicity" => GroupBy::Ethnicity,
                        "insurance" => GroupBy::Insurance,
                        _ => return Err(c.err("unknown group_by")),
                    };
                    true
                }
                "calibration_bins" => {
                    config.evaluate.calibration_bins = c.usize()?;
                    true
                }
                "min_group_size" => {
                    config.evaluate.min_group_size = c.usize()?;
                    true
                }
                _ => false,
            },
            "utility" => match c.key {
                "prevalence" => {
                    config.utility.prevalence = match c.value {
                        "empirical" => UtilityPrevalence::Empirical,
                        _ => UtilityPrevalence::Fixed(c.f64()?),
                    };
                    true
                }
                _ => false,
            },
            _ => unreachable!("section validated above"),
        };
        if !known {
            return Err(c.err("unknown key"));
        }
    }

    if !seed_seen {
        return Err(Error::config("seed is mandatory (set `seed = N` or pass --seed)"));
    }
    config.apply_seed();
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &PipelineConfig) -> Result<()> {
    config.synth.validate()?;
    config.forest.validate()?;
    config.gbm1.validate()?;
    config.gbm2.validate()?;
    config.gru.train.validate()?;
    if config.cohort.merge_gap_hours < 0 {
        return Err(Error::config("merge_gap_hours must be non-negative"));
    }
    if config.evaluate.calibration_bins == 0 {
        return Err(Error::config("calibration_bins must be >= 1"));
    }
    if let UtilityPrevalence::Fixed(p) = config.utility.prevalence {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config("utility prevalence must be in (0,1)"));
        }
    }
    Ok(())
}

/// Canonical text form; `parse_config(render(c))` round-trips.
pub fn render_config(config: &PipelineConfig) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", config.seed);
    let _ = writeln!(s, "out_dir = {}", config.out_dir.display());
    let _ = writeln!(s, "\n[synth]");
    let _ = writeln!(s, "n_patients = {}", config.synth.n_patients);
    let _ = writeln!(s, "range_start = {}", crate::timeutil::format_utc(config.synth.range_start));
    let _ = writeln!(s, "range_end = {}", crate::timeutil::format_utc(config.synth.range_end));
    let _ = writeln!(s, "mean_los_days = {}", config.synth.mean_los_days);
    let _ = writeln!(s, "target_prevalence = {}", config.synth.target_prevalence);
    let _ = writeln!(s, "signal_strength = {}", config.synth.signal_strength);
    let CodePools { diagnosis, procedure, medication, lab } = config.synth.code_pools;
    let _ = writeln!(s, "pool_diagnosis = {diagnosis}");
    let _ = writeln!(s, "pool_procedure = {procedure}");
    let _ = writeln!(s, "pool_medication = {medication}");
    let _ = writeln!(s, "pool_lab = {lab}");
    let _ = writeln!(s, "\n[cohort]");
    let _ = writeln!(s, "cutoff = {}", crate::timeutil::format_utc(config.cohort.cutoff));
    let _ = writeln!(s, "merge_gap_hours = {}", config.cohort.merge_gap_hours);
    let _ = writeln!(
        s,
        "remove_validation_from_train = {}",
        config.cohort.remove_validation_from_train
    );
    let _ = writeln!(s, "\n[features]");
    let _ = writeln!(s, "min_count = {}", config.features.min_count);
    let _ = writeln!(s, "\n[model]");
    let _ = writeln!(s, "kind = {}", config.model_kind.as_str());
    for (name, p) in [("forest", &config.forest), ("gbm1", &config.gbm1), ("gbm2", &config.gbm2)] {
        let _ = writeln!(s, "\n[model.{name}]");
        let _ = writeln!(s, "n_trees = {}", p.n_trees);
        let _ = writeln!(s, "max_depth = {}", p.max_depth);
        let _ = writeln!(s, "min_samples_leaf = {}", p.min_samples_leaf);
        let _ = writeln!(s, "min_samples_split = {}", p.min_samples_split);
        let fs = match p.features_per_split {
            FeatureSample::All => "all".to_string(),
            FeatureSample::Sqrt => "sqrt".to_string(),
            FeatureSample::Count(k) => k.to_string(),
            FeatureSample::Fraction(f) => f.to_string(),
        };
        let _ = writeln!(s, "features_per_split = {fs}");
        let _ = writeln!(s, "subsample = {}", p.subsample);
        let _ = writeln!(s, "bootstrap = {}", p.bootstrap);
        let _ = writeln!(s, "learning_rate = {}", p.learning_rate);
        let _ = writeln!(s, "lambda = {}", p.lambda);
    }
    let t = &config.gru.train;
    let _ = writeln!(s, "\n[model.gru]");
    let _ = writeln!(s, "epochs = {}", t.epochs);
    let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(s, "dropout = {}", t.dropout);
    let _ = writeln!(s, "hidden = {}", t.hidden);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(
        s,
        "embed_mode = {}",
        match t.embed_mode {
            EmbedMode::PerFeature25 => "per_feature_25",
            EmbedMode::Grouped50 => "grouped_50",
        }
    );
    let _ = writeln!(
        s,
        "max_train_patients = {}",
        config.gru.max_train_patients.map_or("all".to_string(), |n| n.to_string())
    );
    let _ = writeln!(s, "\n[evaluate]");
    let _ = writeln!(
        s,
        "group_by = {}",
        match config.evaluate.group_by {
            GroupBy::None => "none",
            GroupBy::Gender => "gender",
            GroupBy::Race => "race",
            GroupBy::Ethnicity => "ethnicity",
            GroupBy::Insurance => "insurance",
        }
    );
    let _ = writeln!(s, "calibration_bins = {}", config.evaluate.calibration_bins);
    let _ = writeln!(s, "min_group_size = {}", config.evaluate.min_group_size);
    let _ = writeln!(s, "\n[utility]");
    let _ = writeln!(
        s,
        "prevalence = {}",
        match config.utility.prevalence {
            UtilityPrevalence::Fixed(p) => p.to_string(),
            UtilityPrevalence::Empirical => "empirical".to_string(),
        }
    );
    s
}
