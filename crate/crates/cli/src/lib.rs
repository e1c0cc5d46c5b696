//! `switchkd` command-line driver: corpus generation, teacher training,
//! distillation, evaluation, misguidance analysis and ablation sweeps.
//!
//! Every command reads one [`config::RunConfig`], writes its artifacts under
//! the output directory and prints a one-line summary on stdout.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use switchkd::corpus::{
    default_task_specs, default_vocab, generate_corpus, load_jsonl, save_jsonl, split, Example,
    SplitFractions, TaskSpec,
};
use switchkd::eval::{evaluate_model, misguidance_analysis, EvalReport, MisguidanceReport};
use switchkd::lm::checkpoint::{load_checkpoint, save_checkpoint};
use switchkd::lm::{ModelParams, Vocab};
use switchkd::numcore::{stream, SeededRng};
use switchkd::policy::{generate, save_traces, PolicyKind, ThresholdSchedule};
use switchkd::trainer::{
    self, load_train_state, run_distillation, save_train_state, ExperimentReport, Method,
    TrainConfig, TrainData, TrainState,
};

use config::{Overrides, RunConfig, SplitName, Strategy};

#[derive(Debug, Parser)]
#[command(
    name = "switchkd",
    version,
    about = "Switched teacher/student distillation experiments"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config file and $SWITCHKD_OUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one config field, e.g. `--set distill.method=kd`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its train/valid/test split.
    GenCorpus,
    /// Supervised training of the teacher and of the student initialization.
    TrainTeacher,
    /// Distill the teacher into the SFT-initialized student.
    Distill {
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint by sampled ROUGE-L, overall and per length bucket.
    Evaluate {
        /// Checkpoint to evaluate (default: the distilled student).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Spearman correlation between sequence quality and training loss, per length bucket.
    AnalyzeMisguidance,
    /// One distillation run per value of an ablation axis, merged into one table.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    DecayFactor,
    Strategy,
    Divergence,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::DecayFactor => "decay_factor",
            Axis::Strategy => "strategy",
            Axis::Divergence => "divergence",
        }
    }
}

/// Parse, validate and execute; returns the summary line.
pub fn run(cli: Cli) -> anyhow::Result<String> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        set: cli.set.clone(),
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    let layout = Layout::new(&cfg)?;
    match cli.command {
        Command::GenCorpus => gen_corpus(&cfg, &layout),
        Command::TrainTeacher => train_teacher(&cfg, &layout),
        Command::Distill { resume } => distill(&cfg, &layout, resume),
        Command::Evaluate { checkpoint } => evaluate(&cfg, &layout, checkpoint),
        Command::AnalyzeMisguidance => analyze_misguidance(&cfg, &layout),
        Command::Sweep { axis } => sweep(&cfg, &layout, axis),
    }
}

/// Artifact locations under the output directory.
pub struct Layout {
    pub out: PathBuf,
    pub corpus: PathBuf,
}

impl Layout {
    fn new(cfg: &RunConfig) -> anyhow::Result<Self> {
        if !cfg.out_dir.is_dir() {
            bail!("output directory {} does not exist", cfg.out_dir.display());
        }
        Ok(Self {
            out: cfg.out_dir.clone(),
            corpus: cfg.corpus_dir.clone(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn split(&self, s: SplitName) -> PathBuf {
        self.corpus.join(s.file_name())
    }

    pub fn lm(&self) -> PathBuf {
        self.corpus.join("lm.jsonl")
    }
}

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_SFT_CKPT: &str = "student_sft.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const DISTILL_STATE: &str = "distill_state.bin";

fn require(path: &Path, what: &str, hint: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("missing {what}: {} ({hint})", path.display());
    }
    Ok(())
}

fn load_split(layout: &Layout, s: SplitName, vocab: &Vocab) -> anyhow::Result<Vec<Example>> {
    let path = layout.split(s);
    require(&path, "dataset file", "run gen-corpus first")?;
    load_jsonl(&path, vocab).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path, what: &str, hint: &str) -> anyhow::Result<ModelParams> {
    require(path, what, hint)?;
    load_checkpoint(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pct1(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn stage_seed(cfg: &RunConfig, key: u64) -> u64 {
    SeededRng::new(cfg.seed).derive(&[key]).next_u64()
}

fn scaled_specs(scale: f64) -> Vec<TaskSpec> {
    default_task_specs()
        .into_iter()
        .map(|s| TaskSpec {
            count: ((s.count as f64 * scale).round() as usize).max(1),
            ..s
        })
        .collect()
}

/// `total` examples spread evenly over the default families and lengths.
fn lm_specs(total: usize) -> Vec<TaskSpec> {
    let base = default_task_specs();
    let n = base.len();
    base.into_iter()
        .enumerate()
        .map(|(i, s)| TaskSpec {
            count: total / n + usize::from(i < total % n),
            ..s
        })
        .filter(|s| s.count > 0)
        .collect()
}

#[derive(Serialize)]
struct CorpusSummary {
    seed: u64,
    vocab_size: usize,
    context_len: usize,
    counts: [(String, usize); 4],
    buckets: Vec<String>,
    bucket_counts: Vec<(String, Vec<usize>)>,
}

fn gen_corpus(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<String> {
    let vocab = default_vocab();
    let context_len = cfg.teacher.context_len.min(cfg.student.context_len);
    let root = SeededRng::new(cfg.seed);
    let corpus = generate_corpus(
        &scaled_specs(cfg.corpus_scale),
        &vocab,
        context_len,
        &mut root.derive(&[stream::CORPUS, 0]),
    )?;
    let fractions = SplitFractions {
        train: 1.0 - cfg.valid_fraction - cfg.test_fraction,
        valid: cfg.valid_fraction,
        test: cfg.test_fraction,
    };
    let splits = split(
        &corpus,
        fractions,
        &cfg.buckets,
        &mut root.derive(&[stream::CORPUS, 1]),
    )?;
    let lm = if cfg.lm_examples > 0 {
        generate_corpus(
            &lm_specs(cfg.lm_examples),
            &vocab,
            context_len,
            &mut root.derive(&[stream::CORPUS, 2]),
        )?
    } else {
        Vec::new()
    };
    fs::create_dir_all(&layout.corpus)
        .with_context(|| format!("creating {}", layout.corpus.display()))?;
    for (s, data) in [
        (SplitName::Train, &splits.train),
        (SplitName::Valid, &splits.valid),
        (SplitName::Test, &splits.test),
    ] {
        save_jsonl(data, &vocab, layout.split(s))?;
    }
    save_jsonl(&lm, &vocab, layout.lm())?;
    let bucket_counts = [
        ("train", &splits.train),
        ("valid", &splits.valid),
        ("test", &splits.test),
    ]
    .into_iter()
    .map(|(name, data)| {
        let mut counts = vec![0; cfg.buckets.len()];
        for ex in data.iter() {
            counts[cfg.buckets.bucket_of(ex.answer_len())] += 1;
        }
        (name.to_string(), counts)
    })
    .collect();
    write_json(
        &layout.corpus.join("summary.json"),
        &CorpusSummary {
            seed: cfg.seed,
            vocab_size: vocab.len(),
            context_len,
            counts: [
                ("train".into(), splits.train.len()),
                ("valid".into(), splits.valid.len()),
                ("test".into(), splits.test.len()),
                ("lm".into(), lm.len()),
            ],
            buckets: cfg.buckets.labels(),
            bucket_counts,
        },
    )?;
    Ok(format!(
        "gen-corpus train={} valid={} test={} lm={} dir={}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        lm.len(),
        layout.corpus.display()
    ))
}

#[derive(Serialize)]
struct TrainingRecord<'a> {
    role: &'a str,
    model: switchkd::lm::ModelConfig,
    config: &'a TrainConfig,
    report: &'a ExperimentReport,
}

fn save_training(
    layout: &Layout,
    prefix: &str,
    params: &ModelParams,
    config: &TrainConfig,
    report: &ExperimentReport,
) -> anyhow::Result<()> {
    save_checkpoint(params, layout.file(&format!("{prefix}.ckpt")))?;
    write_json(
        &layout.file(&format!("{prefix}_report.json")),
        &TrainingRecord {
            role: prefix,
            model: *params.config(),
            config,
            report,
        },
    )?;
    write_text(
        &layout.file(&format!("{prefix}_log.csv")),
        &report.log_csv(),
    )
}

fn train_teacher(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<String> {
    let vocab = default_vocab();
    let train = load_split(layout, SplitName::Train, &vocab)?;
    let valid = load_split(layout, SplitName::Valid, &vocab)?;
    let data = TrainData {
        train: &train,
        valid: &valid,
        vocab: &vocab,
        buckets: &cfg.buckets,
        lm_corpus: &[],
    };
    let (teacher, t_report) = trainer::train_teacher(cfg.teacher, &cfg.teacher_training, &data)?;
    save_training(
        layout,
        "teacher",
        &teacher,
        &cfg.teacher_training,
        &t_report,
    )?;
    let (student, s_report) = trainer::train_teacher(cfg.student, &cfg.student_sft, &data)?;
    save_training(layout, "student_sft", &student, &cfg.student_sft, &s_report)?;
    Ok(format!(
        "train-teacher method=sft teacher_val_rougeL={:.4} (epoch {}) student_sft_val_rougeL={:.4} (epoch {})",
        t_report.best_val_rouge_l, t_report.best_epoch, s_report.best_val_rouge_l, s_report.best_epoch
    ))
}

struct DistillInputs {
    vocab: Vocab,
    teacher: ModelParams,
    student_init: ModelParams,
    train: Vec<Example>,
    valid: Vec<Example>,
    lm: Vec<Example>,
}

fn distill_inputs(layout: &Layout, lm_weight: f64) -> anyhow::Result<DistillInputs> {
    let vocab = default_vocab();
    let teacher = load_model(
        &layout.file(TEACHER_CKPT),
        "teacher checkpoint",
        "run train-teacher first",
    )?;
    let student_init = load_model(
        &layout.file(STUDENT_SFT_CKPT),
        "student initialization checkpoint",
        "run train-teacher first",
    )?;
    let train = load_split(layout, SplitName::Train, &vocab)?;
    let valid = load_split(layout, SplitName::Valid, &vocab)?;
    let lm = if lm_weight > 0.0 {
        require(
            &layout.lm(),
            "language-modeling corpus",
            "run gen-corpus first",
        )?;
        load_jsonl(layout.lm(), &vocab)?
    } else {
        Vec::new()
    };
    Ok(DistillInputs {
        vocab,
        teacher,
        student_init,
        train,
        valid,
        lm,
    })
}

fn distill(cfg: &RunConfig, layout: &Layout, resume: bool) -> anyhow::Result<String> {
    let config = &cfg.distill;
    let inputs = distill_inputs(layout, config.lm_loss_weight)?;
    let state_path = layout.file(DISTILL_STATE);
    let mut state = if resume {
        require(
            &state_path,
            "training state",
            "run distill without --resume first",
        )?;
        load_train_state(&state_path)
            .with_context(|| format!("reading {}", state_path.display()))?
    } else {
        TrainState::new(inputs.student_init.clone())
    };
    let data = TrainData {
        train: &inputs.train,
        valid: &inputs.valid,
        vocab: &inputs.vocab,
        buckets: &cfg.buckets,
        lm_corpus: &inputs.lm,
    };
    let report = trainer::train(Some(&inputs.teacher), &mut state, config, &data)?;
    save_train_state(&state, &state_path)?;
    save_checkpoint(&state.best, layout.file(STUDENT_CKPT))?;
    write_json(
        &layout.file("distill_report.json"),
        &TrainingRecord {
            role: "student",
            model: *state.best.config(),
            config,
            report: &report,
        },
    )?;
    let log_path = layout.file("distill_log.csv");
    if resume && log_path.is_file() {
        let csv = report.log_csv();
        let rows = csv.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)?
            .write_all(rows.as_bytes())?;
    } else {
        write_text(&log_path, &report.log_csv())?;
    }

    // Generations of the configured policy with the selected student, for inspection.
    let mut traces = Vec::new();
    if let Some(policy) = config.generation_policy() {
        let root = SeededRng::new(stage_seed(cfg, 6));
        for (i, ex) in inputs.valid.iter().enumerate() {
            traces.push(generate(
                &inputs.teacher,
                &state.best,
                &ex.prompt(&inputs.vocab),
                &policy,
                inputs.vocab.eos,
                &mut root.derive(&[i as u64]),
            )?);
        }
    }
    save_traces(&traces, layout.file("distill_traces.jsonl"))?;

    let tf = report
        .teacher_fraction()
        .map(|t| format!("{t:.4}"))
        .unwrap_or_else(|| "n/a".into());
    Ok(format!(
        "distill method={} divergence={} val_rougeL={:.4} (epoch {}) teacher_fraction={tf}",
        config.method,
        config.effective_divergence().kind,
        report.best_val_rouge_l,
        report.best_epoch
    ))
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    checkpoint: String,
    split: SplitName,
    note: String,
    report: &'a EvalReport,
}

fn evaluate(
    cfg: &RunConfig,
    layout: &Layout,
    checkpoint: Option<PathBuf>,
) -> anyhow::Result<String> {
    let vocab = default_vocab();
    let path = checkpoint
        .or_else(|| cfg.eval_checkpoint.clone())
        .unwrap_or_else(|| layout.file(STUDENT_CKPT));
    let params = load_model(&path, "checkpoint", "run distill or train-teacher first")?;
    let examples = load_split(layout, cfg.eval_split, &vocab)?;
    let report = evaluate_model(
        &params,
        &examples,
        &vocab,
        &cfg.buckets,
        &cfg.eval,
        stage_seed(cfg, 5),
    )?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model")
        .to_string();
    let note = if cfg.eval.greedy {
        "greedy decoding".to_string()
    } else {
        format!(
            "ROUGE-L averaged over {} sampled responses per item (temperature {})",
            cfg.eval.seeds, cfg.eval.temperature
        )
    };
    write_json(
        &layout.file(&format!("eval_{stem}.json")),
        &EvalRecord {
            checkpoint: path
                .strip_prefix(&layout.out)
                .unwrap_or(&path)
                .display()
                .to_string(),
            split: cfg.eval_split,
            note,
            report: &report,
        },
    )?;
    write_text(
        &layout.file(&format!("eval_{stem}_items.csv")),
        &report.items_csv(),
    )?;
    let mut line = format!(
        "evaluate checkpoint={stem} rougeL={:.4} seeds={}",
        report.overall, report.seeds
    );
    for b in &report.buckets {
        match b.mean_rouge_l {
            Some(v) => write!(line, " {}={v:.4}", b.bucket)?,
            None => write!(line, " {}=n/a", b.bucket)?,
        }
    }
    Ok(line)
}

fn analyze_misguidance(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<String> {
    let vocab = default_vocab();
    let teacher = load_model(
        &layout.file(TEACHER_CKPT),
        "teacher checkpoint",
        "run train-teacher first",
    )?;
    let student = load_model(
        &layout.file(STUDENT_SFT_CKPT),
        "student initialization checkpoint",
        "run train-teacher first",
    )?;
    let examples = load_split(layout, cfg.misguidance_split, &vocab)?;
    let (a, b) = &cfg.misguidance_policies;
    let report = misguidance_analysis(
        &teacher,
        &student,
        &examples,
        &vocab,
        a,
        b,
        &cfg.buckets,
        &cfg.misguidance,
    )?;
    write_json(&layout.file("misguidance.json"), &report)?;
    write_text(&layout.file("misguidance_rows.csv"), &report.rows_csv())?;
    let last = cfg.buckets.label(cfg.buckets.len() - 1);
    let fmt = |c: Option<f64>| c.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    Ok(format!(
        "analyze-misguidance bucket={last} {}={} {}={}",
        a.kind,
        fmt(MisguidanceReport::coefficient(&report.policy_a, &last)),
        b.kind,
        fmt(MisguidanceReport::coefficient(&report.policy_b, &last)),
    ))
}

/// One cell of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub method: Method,
    pub policy: Option<PolicyKind>,
    pub divergence: String,
    pub status: String,
    pub rouge_l: Option<f64>,
    pub buckets: Vec<(String, Option<f64>)>,
    pub student_fraction: Option<f64>,
    pub teacher_fraction: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn sweep_cells(cfg: &RunConfig, axis: Axis) -> Vec<(String, TrainConfig)> {
    let base = TrainConfig {
        method: Method::SwitchDistill,
        ..cfg.distill
    };
    match axis {
        Axis::DecayFactor => cfg
            .decay_factors
            .iter()
            .map(|&lambda| {
                let mut c = base;
                c.policy.kind = PolicyKind::Switch;
                c.policy.schedule = ThresholdSchedule {
                    lambda,
                    ..ThresholdSchedule::exp_decay(lambda)
                };
                (format!("{lambda}"), c)
            })
            .collect(),
        Axis::Strategy => cfg
            .strategies
            .iter()
            .map(|&s: &Strategy| {
                let c = TrainConfig {
                    policy: s.policy(&base.policy),
                    ..base
                };
                (s.label().to_string(), c)
            })
            .collect(),
        Axis::Divergence => cfg
            .divergences
            .iter()
            .flat_map(|&kind| {
                let divergence = switchkd::divergence::DivergenceSpec::new(kind);
                [Method::SgoDistill, Method::SwitchDistill].map(|method| {
                    let c = TrainConfig {
                        method,
                        divergence,
                        ..base
                    };
                    let tag = if method == Method::SwitchDistill {
                        "on"
                    } else {
                        "off"
                    };
                    (format!("{kind}/switch={tag}"), c)
                })
            })
            .collect(),
    }
}

fn sweep(cfg: &RunConfig, layout: &Layout, axis: Axis) -> anyhow::Result<String> {
    let inputs = distill_inputs(layout, cfg.distill.lm_loss_weight)?;
    let test = load_split(layout, SplitName::Test, &inputs.vocab)?;
    let data = TrainData {
        train: &inputs.train,
        valid: &inputs.valid,
        vocab: &inputs.vocab,
        buckets: &cfg.buckets,
        lm_corpus: &inputs.lm,
    };
    let labels = cfg.buckets.labels();
    let mut rows = Vec::new();
    for (value, config) in sweep_cells(cfg, axis) {
        let mut row = SweepRow {
            axis: axis.name().into(),
            value,
            method: config.method,
            policy: config.generation_policy().map(|p| p.kind),
            divergence: config.effective_divergence().kind.to_string(),
            status: "ok".into(),
            rouge_l: None,
            buckets: labels.iter().map(|l| (l.clone(), None)).collect(),
            student_fraction: None,
            teacher_fraction: None,
            best_epoch: None,
        };
        let outcome =
            run_distillation(&inputs.teacher, inputs.student_init.clone(), &config, &data)
                .and_then(|(student, report)| {
                    let eval = evaluate_model(
                        &student,
                        &test,
                        &inputs.vocab,
                        &cfg.buckets,
                        &cfg.eval,
                        stage_seed(cfg, 5),
                    )?;
                    Ok((report, eval))
                });
        match outcome {
            Ok((report, eval)) => {
                row.rouge_l = Some(eval.overall);
                row.buckets = eval
                    .buckets
                    .iter()
                    .map(|b| (b.bucket.clone(), b.mean_rouge_l))
                    .collect();
                row.student_fraction = report.intervention.map(|(s, _)| s);
                row.teacher_fraction = report.intervention.map(|(_, t)| t);
                row.best_epoch = Some(report.best_epoch);
            }
            Err(e) => row.status = format!("failed: {e}"),
        }
        println!(
            "sweep {} {} rougeL={} teacher_fraction={}",
            row.axis,
            row.value,
            row.rouge_l
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            row.teacher_fraction
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        );
        rows.push(row);
    }
    let name = format!("sweep_{}", axis.name());
    write_json(&layout.file(&format!("{name}.json")), &rows)?;
    write_text(
        &layout.file(&format!("{name}.csv")),
        &sweep_csv(&rows, &labels),
    )?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        return Err(anyhow!(
            "sweep {}: {failed} of {} runs failed (see {name}.csv)",
            axis.name(),
            rows.len()
        ));
    }
    Ok(format!(
        "sweep axis={} runs={} table={name}.csv",
        axis.name(),
        rows.len()
    ))
}

/// Full-precision values alongside percentages rounded to one decimal.
pub fn sweep_csv(rows: &[SweepRow], labels: &[String]) -> String {
    let mut out = String::from("axis,value,method,policy,divergence,status,rougeL,rougeL_pct");
    for l in labels {
        write!(out, ",rougeL_{l},rougeL_{l}_pct").unwrap();
    }
    out.push_str(
        ",student_tokens,student_tokens_pct,teacher_tokens,teacher_tokens_pct,best_epoch\n",
    );
    let full = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let pct = |v: Option<f64>| v.map(pct1).unwrap_or_default();
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.axis,
            csv_field(&r.value),
            r.method,
            r.policy.map(|p| p.to_string()).unwrap_or_default(),
            r.divergence,
            csv_field(&r.status),
            full(r.rouge_l),
            pct(r.rouge_l)
        )
        .unwrap();
        for (_, v) in &r.buckets {
            write!(out, ",{},{}", full(*v), pct(*v)).unwrap();
        }
        writeln!(
            out,
            ",{},{},{},{},{}",
            full(r.student_fraction),
            pct(r.student_fraction),
            full(r.teacher_fraction),
            pct(r.teacher_fraction),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
