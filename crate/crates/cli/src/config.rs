//! Run configuration: a TOML file, `--set key=value` overrides, and total
//! validation into typed settings before any compute starts.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use switchkd::divergence::{DivergenceKind, DivergenceSpec};
use switchkd::eval::{EvalOptions, LengthBucketSpec, MisguidanceOptions};
use switchkd::lm::{Arch, ModelConfig};
use switchkd::policy::{PolicyKind, PolicySpec, ScheduleKind, ThresholdSchedule};
use switchkd::trainer::{Method, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SWITCHKD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub corpus: RawCorpus,
    pub teacher: RawModel,
    pub student: RawModel,
    pub teacher_training: RawTraining,
    pub student_sft: RawTraining,
    pub distill: RawDistill,
    pub policy: RawPolicy,
    pub eval: RawEval,
    pub misguidance: RawMisguidance,
    pub sweep: RawSweep,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: None,
            corpus: RawCorpus::default(),
            teacher: RawModel {
                hidden_dim: 64,
                ..RawModel::default()
            },
            student: RawModel::default(),
            teacher_training: RawTraining::default(),
            student_sft: RawTraining {
                epochs: 40,
                ..RawTraining::default()
            },
            distill: RawDistill::default(),
            policy: RawPolicy::default(),
            eval: RawEval::default(),
            misguidance: RawMisguidance::default(),
            sweep: RawSweep::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawCorpus {
    /// Dataset directory; relative paths resolve against the output directory.
    pub dir: PathBuf,
    /// Multiplier on the default per-family example counts.
    pub scale: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Size of the held-out language-modeling corpus.
    pub lm_examples: usize,
}

impl Default for RawCorpus {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("corpus"),
            scale: 1.0,
            valid_fraction: 150.0 / 2300.0,
            test_fraction: 150.0 / 2300.0,
            lm_examples: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawModel {
    pub arch: String,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
}

impl Default for RawModel {
    fn default() -> Self {
        Self {
            arch: "gru".into(),
            embed_dim: 16,
            hidden_dim: 16,
            context_len: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    pub validation_seeds: usize,
}

impl Default for RawTraining {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 5e-3,
            grad_clip: 1.0,
            eval_every: 0,
            validation_seeds: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawDistill {
    pub method: String,
    pub divergence: String,
    /// β for gjsd, α for skl/srkl; defaults per kind.
    pub divergence_weight: Option<f64>,
    pub mix_ratio: f64,
    pub lm_loss_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    pub validation_seeds: usize,
}

impl Default for RawDistill {
    fn default() -> Self {
        Self {
            method: "switch_distill".into(),
            divergence: "srkl".into(),
            divergence_weight: None,
            mix_ratio: 0.5,
            lm_loss_weight: 0.0,
            epochs: 5,
            batch_size: 16,
            learning_rate: 2e-3,
            grad_clip: 1.0,
            eval_every: 0,
            validation_seeds: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawPolicy {
    pub kind: String,
    pub schedule: String,
    pub tau0: f64,
    pub lambda: f64,
    /// Linear-decrease horizon; defaults to `max_new_tokens`.
    pub max_len: Option<usize>,
    pub c: f64,
    pub alpha: f64,
    pub p_teacher: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
}

impl Default for RawPolicy {
    fn default() -> Self {
        Self {
            kind: "switch".into(),
            schedule: "exp_decay".into(),
            tau0: 1.0,
            lambda: 0.1,
            max_len: None,
            c: 0.2,
            alpha: 0.2,
            p_teacher: 0.5,
            temperature: 1.0,
            max_new_tokens: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawEval {
    pub seeds: usize,
    pub temperature: f64,
    pub greedy: bool,
    pub max_new_tokens: usize,
    pub buckets: Vec<usize>,
    /// Checkpoint to evaluate; defaults to the distilled student.
    pub checkpoint: Option<PathBuf>,
    pub split: String,
}

impl Default for RawEval {
    fn default() -> Self {
        Self {
            seeds: 5,
            temperature: 1.0,
            greedy: false,
            max_new_tokens: 128,
            buckets: vec![10, 50],
            checkpoint: None,
            split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawMisguidance {
    pub divergence: String,
    pub min_per_bucket: usize,
    pub split: String,
    pub policy_a: String,
    pub policy_b: String,
}

impl Default for RawMisguidance {
    fn default() -> Self {
        Self {
            divergence: "srkl".into(),
            min_per_bucket: 30,
            split: "train".into(),
            policy_a: "switch".into(),
            policy_b: "sgo".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawSweep {
    pub decay_factors: Vec<f64>,
    pub strategies: Vec<String>,
    pub divergences: Vec<String>,
}

impl Default for RawSweep {
    fn default() -> Self {
        Self {
            decay_factors: vec![1.0 / 5.0, 1.0 / 10.0, 1.0 / 15.0, 1.0 / 25.0],
            strategies: Strategy::ALL.iter().map(|s| s.name().to_string()).collect(),
            divergences: ["kl", "rkl", "gjsd", "srkl"].map(String::from).to_vec(),
        }
    }
}

/// Teacher-involvement strategies compared in the strategy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Mixin,
    Random,
    LinearDecrease,
    ExpGrowth,
    Constant,
    Switch,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Mixin,
        Strategy::Random,
        Strategy::LinearDecrease,
        Strategy::ExpGrowth,
        Strategy::Constant,
        Strategy::Switch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mixin => "mixin",
            Strategy::Random => "random",
            Strategy::LinearDecrease => "linear_decrease",
            Strategy::ExpGrowth => "exp_growth",
            Strategy::Constant => "constant",
            Strategy::Switch => "switch",
        }
    }

    /// Row label in the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Mixin => "Mix-in teacher prob.",
            Strategy::Random => "Random teacher gen",
            Strategy::LinearDecrease => "Linear decrease",
            Strategy::ExpGrowth => "Exponential growth",
            Strategy::Constant => "Constant threshold",
            Strategy::Switch => "SWITCH",
        }
    }

    /// The generation policy for this strategy, derived from `base`.
    pub fn policy(self, base: &PolicySpec) -> PolicySpec {
        let schedule = base.schedule;
        let with = |kind, schedule| PolicySpec {
            kind,
            schedule,
            ..*base
        };
        match self {
            Strategy::Mixin => with(PolicyKind::Mixin, schedule),
            Strategy::Random => with(PolicyKind::Random, schedule),
            Strategy::LinearDecrease => with(
                PolicyKind::Switch,
                ThresholdSchedule {
                    kind: ScheduleKind::LinearDecrease,
                    ..schedule
                },
            ),
            Strategy::ExpGrowth => with(
                PolicyKind::Switch,
                ThresholdSchedule {
                    kind: ScheduleKind::ExpGrowth,
                    ..schedule
                },
            ),
            Strategy::Constant => with(
                PolicyKind::Switch,
                ThresholdSchedule {
                    kind: ScheduleKind::Constant,
                    ..schedule
                },
            ),
            Strategy::Switch => with(
                PolicyKind::Switch,
                ThresholdSchedule {
                    kind: ScheduleKind::ExpDecay,
                    ..schedule
                },
            ),
        }
    }
}

impl FromStr for Strategy {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| anyhow!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitName::Train => "train.jsonl",
            SplitName::Valid => "valid.jsonl",
            SplitName::Test => "test.jsonl",
        }
    }
}

impl FromStr for SplitName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => bail!("unknown split {other:?} (expected train, valid or test)"),
        }
    }
}

/// Fully validated settings.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus_dir: PathBuf,
    pub corpus_scale: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub lm_examples: usize,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub teacher_training: TrainConfig,
    pub student_sft: TrainConfig,
    pub distill: TrainConfig,
    pub eval: EvalOptions,
    pub eval_split: SplitName,
    pub eval_checkpoint: Option<PathBuf>,
    pub buckets: LengthBucketSpec,
    pub misguidance: MisguidanceOptions,
    pub misguidance_split: SplitName,
    pub misguidance_policies: (PolicySpec, PolicySpec),
    pub decay_factors: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub divergences: Vec<DivergenceKind>,
}

/// Values given on the command line, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub set: Vec<String>,
}

/// Read `path` (if any), apply overrides, and validate.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("config file {} is not valid TOML", p.display()))?
        }
        None => toml::Table::new(),
    };
    for item in &overrides.set {
        apply_set(&mut table, item)?;
    }
    let raw: RawConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    resolve(raw, overrides)
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string.
fn apply_set(table: &mut toml::Table, item: &str) -> anyhow::Result<()> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override {item:?} is not of the form key=value"))?;
    let key = key.trim();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key {key:?}: {part:?} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

struct Errors(Vec<String>);

impl Errors {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    fn parse<T: FromStr>(&mut self, field: &str, value: &str) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        match value.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.0.push(format!("{field}: {e}"));
                None
            }
        }
    }

    fn lib<T>(&mut self, field: &str, r: switchkd::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.0.push(format!("{field}: {e}"));
                None
            }
        }
    }
}

fn resolve(raw: RawConfig, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut errs = Errors(Vec::new());
    let seed = overrides.seed.or(raw.seed);
    errs.check(seed.is_some(), || {
        "seed: a master seed is required (config `seed` or --seed)".into()
    });
    let out_dir = overrides
        .out_dir
        .clone()
        .or(raw.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let corpus_dir = if raw.corpus.dir.is_absolute() {
        raw.corpus.dir.clone()
    } else {
        out_dir.join(&raw.corpus.dir)
    };

    let c = &raw.corpus;
    errs.check(c.scale > 0.0 && c.scale.is_finite(), || {
        format!("corpus.scale: must be positive, got {}", c.scale)
    });
    for (name, v) in [
        ("corpus.valid_fraction", c.valid_fraction),
        ("corpus.test_fraction", c.test_fraction),
    ] {
        errs.check((0.0..1.0).contains(&v), || {
            format!("{name}: must lie in [0, 1), got {v}")
        });
    }
    errs.check(c.valid_fraction + c.test_fraction < 1.0, || {
        "corpus: valid_fraction + test_fraction must leave room for training data".into()
    });

    let vocab_size = switchkd::corpus::default_vocab().len();
    let mut model = |name: &str, m: &RawModel| {
        let arch = errs.parse::<Arch>(&format!("{name}.arch"), &m.arch);
        let cfg = ModelConfig {
            arch: arch.unwrap_or(Arch::Gru),
            vocab_size,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            context_len: m.context_len,
        };
        errs.lib(name, cfg.validate());
        cfg
    };
    let teacher = model("teacher", &raw.teacher);
    let student = model("student", &raw.student);

    let p = &raw.policy;
    let kind = errs.parse::<PolicyKind>("policy.kind", &p.kind);
    let schedule_kind = errs.parse::<ScheduleKind>("policy.schedule", &p.schedule);
    let policy = PolicySpec {
        kind: kind.unwrap_or(PolicyKind::Switch),
        schedule: ThresholdSchedule {
            kind: schedule_kind.unwrap_or(ScheduleKind::ExpDecay),
            tau0: p.tau0,
            lambda: p.lambda,
            max_len: p.max_len.unwrap_or(p.max_new_tokens),
            c: p.c,
        },
        alpha: p.alpha,
        p_teacher: p.p_teacher,
        temperature: p.temperature,
        max_new_tokens: p.max_new_tokens,
    };
    errs.lib("policy", policy.validate());

    let stage_seed = |k: u64| {
        seed.map(|s| switchkd::numcore::SeededRng::new(s).derive(&[k]).next_u64())
            .unwrap_or(0)
    };
    let validation = |seeds: usize| EvalOptions {
        seeds,
        temperature: raw.eval.temperature,
        greedy: raw.eval.greedy,
        max_new_tokens: raw.eval.max_new_tokens,
    };
    let supervised = |t: &RawTraining, k: u64| TrainConfig {
        method: Method::Sft,
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        grad_clip: t.grad_clip,
        eval_every: t.eval_every,
        seed: stage_seed(k),
        validation: validation(t.validation_seeds),
        policy,
        ..TrainConfig::default()
    };
    let teacher_training = supervised(&raw.teacher_training, 1);
    let student_sft = supervised(&raw.student_sft, 2);
    errs.lib("teacher_training", teacher_training.validate());
    errs.lib("student_sft", student_sft.validate());

    let d = &raw.distill;
    let method = errs.parse::<Method>("distill.method", &d.method);
    let divergence = parse_divergence(&mut errs, "distill", &d.divergence, d.divergence_weight);
    let distill = TrainConfig {
        method: method.unwrap_or(Method::SwitchDistill),
        divergence: divergence.unwrap_or_default(),
        policy,
        mix_ratio: d.mix_ratio,
        lm_loss_weight: d.lm_loss_weight,
        epochs: d.epochs,
        batch_size: d.batch_size,
        learning_rate: d.learning_rate,
        grad_clip: d.grad_clip,
        seed: stage_seed(3),
        eval_every: d.eval_every,
        validation: validation(d.validation_seeds),
    };
    errs.lib("distill", distill.validate());
    if distill.lm_loss_weight > 0.0 {
        errs.check(raw.corpus.lm_examples > 0, || {
            "distill.lm_loss_weight > 0 needs corpus.lm_examples > 0".into()
        });
    }

    let e = &raw.eval;
    let eval = validation(e.seeds);
    errs.check(e.seeds > 0, || "eval.seeds: must be at least 1".into());
    errs.check(e.temperature > 0.0 && e.temperature.is_finite(), || {
        format!("eval.temperature: must be positive, got {}", e.temperature)
    });
    errs.check(e.max_new_tokens > 0, || {
        "eval.max_new_tokens: must be at least 1".into()
    });
    let buckets = errs
        .lib("eval.buckets", LengthBucketSpec::new(e.buckets.clone()))
        .unwrap_or_default();
    let eval_split = errs.parse::<SplitName>("eval.split", &e.split);

    let m = &raw.misguidance;
    let mdiv = parse_divergence(&mut errs, "misguidance", &m.divergence, None);
    let misguidance_split = errs.parse::<SplitName>("misguidance.split", &m.split);
    let pa = errs.parse::<PolicyKind>("misguidance.policy_a", &m.policy_a);
    let pb = errs.parse::<PolicyKind>("misguidance.policy_b", &m.policy_b);
    errs.check(m.min_per_bucket >= 2, || {
        "misguidance.min_per_bucket: must be at least 2".into()
    });

    let s = &raw.sweep;
    for (i, &l) in s.decay_factors.iter().enumerate() {
        errs.check(l > 0.0 && l.is_finite(), || {
            format!("sweep.decay_factors[{i}]: must be positive, got {l}")
        });
    }
    let strategies: Vec<Strategy> = s
        .strategies
        .iter()
        .enumerate()
        .filter_map(|(i, v)| errs.parse(&format!("sweep.strategies[{i}]"), v))
        .collect();
    let divergences: Vec<DivergenceKind> = s
        .divergences
        .iter()
        .enumerate()
        .filter_map(|(i, v)| errs.parse(&format!("sweep.divergences[{i}]"), v))
        .collect();

    if !errs.0.is_empty() {
        bail!(
            "invalid configuration ({} problem{}):\n  - {}",
            errs.0.len(),
            if errs.0.len() == 1 { "" } else { "s" },
            errs.0.join("\n  - ")
        );
    }
    Ok(RunConfig {
        seed: seed.unwrap_or_default(),
        out_dir,
        corpus_dir,
        corpus_scale: c.scale,
        valid_fraction: c.valid_fraction,
        test_fraction: c.test_fraction,
        lm_examples: c.lm_examples,
        teacher,
        student,
        teacher_training,
        student_sft,
        distill,
        eval,
        eval_split: eval_split.unwrap_or(SplitName::Test),
        eval_checkpoint: e.checkpoint.clone(),
        buckets,
        misguidance: MisguidanceOptions {
            divergence: mdiv.unwrap_or_default(),
            min_per_bucket: m.min_per_bucket,
            seed: stage_seed(4),
        },
        misguidance_split: misguidance_split.unwrap_or(SplitName::Train),
        misguidance_policies: (
            PolicySpec {
                kind: pa.unwrap_or(PolicyKind::Switch),
                ..policy
            },
            PolicySpec {
                kind: pb.unwrap_or(PolicyKind::Sgo),
                ..policy
            },
        ),
        decay_factors: s.decay_factors.clone(),
        strategies,
        divergences,
    })
}

fn parse_divergence(
    errs: &mut Errors,
    section: &str,
    name: &str,
    weight: Option<f64>,
) -> Option<DivergenceSpec> {
    let kind = errs.parse::<DivergenceKind>(&format!("{section}.divergence"), name)?;
    let spec = match weight {
        Some(w) => DivergenceSpec::with_weight(kind, w),
        None => DivergenceSpec::new(kind),
    };
    errs.lib(&format!("{section}.divergence_weight"), spec.validate())?;
    Some(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_seed() -> Overrides {
        Overrides {
            seed: Some(3),
            ..Overrides::default()
        }
    }

    #[test]
    fn defaults_resolve() {
        let cfg = load(None, &with_seed()).unwrap();
        assert_eq!(cfg.teacher.hidden_dim, 4 * cfg.student.hidden_dim);
        assert_eq!(cfg.distill.method, Method::SwitchDistill);
        assert_eq!(cfg.distill.divergence.kind, DivergenceKind::Srkl);
        assert_eq!(cfg.distill.policy.schedule.lambda, 0.1);
        assert_eq!(cfg.distill.policy.schedule.max_len, 128);
        assert_eq!(cfg.strategies.len(), 6);
        assert_eq!(cfg.decay_factors.len(), 4);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = load(None, &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("seed"));
    }

    #[test]
    fn all_problems_are_reported_together() {
        let o = Overrides {
            set: vec![
                "distill.method=nonsense".into(),
                "distill.mix_ratio=2.0".into(),
                "policy.schedule=zigzag".into(),
                "eval.buckets=[50, 10]".into(),
            ],
            ..with_seed()
        };
        let msg = format!("{:#}", load(None, &o).unwrap_err());
        for needle in [
            "distill.method",
            "mix_ratio",
            "policy.schedule",
            "eval.buckets",
        ] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn overrides_take_toml_literals_and_bare_strings() {
        let o = Overrides {
            set: vec![
                "distill.method=kd".into(),
                "policy.lambda=0.04".into(),
                "sweep.divergences=[\"kl\"]".into(),
            ],
            ..with_seed()
        };
        let cfg = load(None, &o).unwrap();
        assert_eq!(cfg.distill.method, Method::Kd);
        assert_eq!(cfg.distill.policy.schedule.lambda, 0.04);
        assert_eq!(cfg.divergences, vec![DivergenceKind::Kl]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let o = Overrides {
            set: vec!["distill.mixratio=0.3".into()],
            ..with_seed()
        };
        assert!(format!("{:#}", load(None, &o).unwrap_err()).contains("mixratio"));
    }

    #[test]
    fn stage_seeds_follow_master_seed() {
        let a = load(None, &with_seed()).unwrap();
        let b = load(None, &with_seed()).unwrap();
        let c = load(
            None,
            &Overrides {
                seed: Some(4),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(a.distill.seed, b.distill.seed);
        assert_ne!(a.distill.seed, c.distill.seed);
        assert_ne!(a.distill.seed, a.teacher_training.seed);
    }
}
