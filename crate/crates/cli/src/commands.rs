use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;
use tlsqkt_core::data::{
    adapt_assist09, load_canonical, read_canonical, remap, window_and_pad, window_sequences, write_canonical,
    write_ground_truth, AdaptReport, DataError, Dataset, DatasetStats, IdMap, Sequence,
};
use tlsqkt_core::model::{extract_trajectories, Checkpoint, VariantKind};
use tlsqkt_core::train::{
    evaluate, prepare_split, run_ablation_suite, train as train_model, write_ablation_csv, ConfigError, TrainConfig,
};

use crate::output::{json, OutputDir};
use crate::synth::SynthSettings;
use crate::{AblateArgs, ConfigArgs, EvalArgs, Format, PrepArgs, SplitName, SynthArgs, TraceArgs};

const EVAL_BATCH: usize = 64;

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `base`, then the config file, then the overrides.
fn train_config(
    mut base: TrainConfig,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> anyhow::Result<TrainConfig> {
    if let Some(path) = file {
        base.apply_text(&read_text(path)?)?;
    }
    for (k, v) in overrides {
        base.set(k, v)?;
    }
    base.validate()?;
    Ok(base)
}

fn data_path(config: &TrainConfig) -> Result<&Path, ConfigError> {
    config
        .data
        .as_deref()
        .map(Path::new)
        .ok_or_else(|| ConfigError::Invalid("`data` must name a canonical CSV".into()))
}

/// Loads `path` through the checkpoint's vocabulary.
fn load_for_checkpoint(path: &Path, id_map: Option<&IdMap>) -> anyhow::Result<Dataset> {
    let map = id_map.ok_or_else(|| anyhow!("checkpoint carries no id map"))?;
    let sequences = read_canonical(open(path)?)?;
    remap(sequences, map).with_context(|| format!("{} does not match the checkpoint vocabulary", path.display()))
}

#[derive(Serialize)]
struct StatsReport<'a> {
    #[serde(flatten)]
    stats: &'a DatasetStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    adapter: Option<&'a AdaptReport>,
    config: &'a BTreeMap<String, String>,
}

fn write_dataset(
    out: &OutputDir,
    sequences: &[Sequence],
    adapter: Option<&AdaptReport>,
    config: &BTreeMap<String, String>,
) -> anyhow::Result<()> {
    if sequences.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut csv = Vec::new();
    write_canonical(sequences, &mut csv)?;
    out.write("interactions.csv", csv)?;
    let stats = DatasetStats::from_sequences(sequences);
    out.write(
        "stats.json",
        json(&StatsReport {
            stats: &stats,
            adapter,
            config,
        })?,
    )?;
    out.write_config(config)?;
    Ok(())
}

pub fn prep(a: &PrepArgs) -> anyhow::Result<()> {
    let out = OutputDir::open(&a.out)?;
    out.guard(|out| {
        let reader = open(&a.input)?;
        let (sequences, adapter) = match a.format {
            Format::Assist09 => {
                let (s, r) = adapt_assist09(reader)?;
                (s, Some(r))
            }
            Format::Canonical => (read_canonical(reader)?, None),
        };
        let config: BTreeMap<String, String> = [
            ("input".to_string(), a.input.display().to_string()),
            (
                "format".to_string(),
                match a.format {
                    Format::Assist09 => "assist09",
                    Format::Canonical => "canonical",
                }
                .to_string(),
            ),
        ]
        .into();
        write_dataset(out, &sequences, adapter.as_ref(), &config)
    })
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let out = OutputDir::open(&a.out)?;
    out.guard(|out| {
        let mut settings = SynthSettings::default();
        if let Some(path) = &a.config {
            settings.apply_text(&read_text(path)?)?;
        }
        for (k, v) in &a.overrides {
            settings.set(k, v)?;
        }
        settings.validate()?;
        let data = tlsqkt_core::data::generate_synthetic_literacy(&settings.0);
        let config = settings.to_map();
        write_dataset(out, &data.sequences, None, &config)?;
        let mut truth = Vec::new();
        write_ground_truth(&data.ground_truth, &mut truth)?;
        out.write("ground_truth.csv", truth)?;
        Ok(())
    })
}

pub fn train(a: &ConfigArgs) -> anyhow::Result<()> {
    let config = train_config(TrainConfig::default(), a.config.as_deref(), &a.overrides)?;
    let out = OutputDir::open(&config.output_dir)?;
    out.guard(|out| {
        let dataset = load_canonical(data_path(&config)?)?;
        let outcome = train_model(&config, &dataset)?;
        let checkpoint = Checkpoint::from_model(
            &outcome.model,
            config.seed,
            config.to_map(),
            config.hash(),
            Some(dataset.id_map.clone()),
        );
        out.write("checkpoint.json", checkpoint.to_json()?)?;
        out.write("report.json", outcome.report.to_json())?;
        out.write_config(&config.to_map())?;
        log::info!(
            "{}: best epoch {}, test auc {:.4}, acc {:.4}",
            config.variant,
            outcome.report.best_epoch,
            outcome.report.test_auc,
            outcome.report.test_acc
        );
        Ok(())
    })
}

#[derive(Serialize)]
struct EvalReport {
    variant: VariantKind,
    split: &'static str,
    students: usize,
    targets: usize,
    auc: f64,
    acc: f64,
    seed: u64,
    config_hash: String,
    config: BTreeMap<String, String>,
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let mut base = TrainConfig::default();
    for (k, v) in &checkpoint.meta.config {
        base.set(k, v)?;
    }
    let config = train_config(base, a.config.as_deref(), &a.overrides)?;
    let out = OutputDir::open(&config.output_dir)?;
    out.guard(|out| {
        let model = checkpoint.to_model()?;
        let dataset = load_for_checkpoint(data_path(&config)?, checkpoint.meta.id_map.as_ref())?;
        let split = prepare_split(&config, &dataset.sequences)?;
        let (name, students) = match a.split {
            SplitName::Train => ("train", &split.train),
            SplitName::Validation => ("validation", &split.validation),
            SplitName::Test => ("test", &split.test),
        };
        let batches = window_and_pad(students, model.dims.max_seq_len, EVAL_BATCH);
        let scores = evaluate(&model, &batches, config.execution)?;
        let report = EvalReport {
            variant: model.variant,
            split: name,
            students: students.len(),
            targets: scores.labels.len(),
            auc: scores.auc()?,
            acc: scores.accuracy()?,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.to_map(),
        };
        log::info!("{} on {name}: auc {:.4}, acc {:.4}", report.variant, report.auc, report.acc);
        out.write(&format!("eval_{name}.json"), json(&report)?)?;
        Ok(())
    })
}

#[derive(Serialize)]
struct TraceRow<'a> {
    student_id: &'a str,
    step: usize,
    literacy_id: u64,
    prob: f64,
}

pub fn trace(a: &TraceArgs) -> anyhow::Result<()> {
    let out = OutputDir::open(&a.out)?;
    out.guard(|out| {
        let checkpoint = Checkpoint::load(&a.checkpoint)?;
        let model = checkpoint.to_model()?;
        let dataset = load_for_checkpoint(&a.data, checkpoint.meta.id_map.as_ref())?;
        let windows = window_sequences(&dataset.sequences, model.dims.max_seq_len);
        let seen = dataset.questions_by_literacy();
        let probes: BTreeMap<usize, Vec<usize>> = (1..=model.dims.n_literacy)
            .map(|l| (l, seen.get(&l).cloned().unwrap_or_default()))
            .collect();
        let traj = extract_trajectories(&model, &windows, &probes, EVAL_BATCH)?;

        let vocab = if dataset.id_map.literacy.is_empty() {
            &dataset.id_map.kc
        } else {
            &dataset.id_map.literacy
        };
        let original = IdMap::inverse(vocab);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &traj.rows {
            w.serialize(TraceRow {
                student_id: &r.student_id,
                step: r.step,
                literacy_id: original[&r.literacy_id],
                prob: r.prob,
            })?;
        }
        out.write("trajectories.csv", w.into_inner()?)?;

        let width = traj.states.first().map_or(0, |s| s.state.len());
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["student_id".to_string(), "step".to_string()];
        header.extend((0..width).map(|i| format!("b_{i}")));
        w.write_record(&header)?;
        for s in &traj.states {
            let mut rec = vec![s.student_id.clone(), s.step.to_string()];
            rec.extend(s.state.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        out.write("literacy_states.csv", w.into_inner()?)?;

        let mut config = checkpoint.meta.config.clone();
        config.insert("checkpoint".into(), a.checkpoint.display().to_string());
        config.insert("data".into(), a.data.display().to_string());
        out.write_config(&config)?;
        Ok(())
    })
}

pub fn ablate(a: &AblateArgs) -> anyhow::Result<()> {
    let config = train_config(TrainConfig::default(), a.config.as_deref(), &a.overrides)?;
    let variants: Vec<VariantKind> = match &a.variants {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ConfigError::BadValue {
                    key: "variants".into(),
                    value: s.into(),
                    reason: "unknown variant".into(),
                })
            })
            .collect::<Result<_, _>>()?,
        None => VariantKind::ABLATIONS.to_vec(),
    };
    let out = OutputDir::open(&config.output_dir)?;
    out.guard(|out| {
        let dataset = load_canonical(data_path(&config)?)?;
        let result = run_ablation_suite(&config, &dataset, &variants)?;
        let mut csv = Vec::new();
        write_ablation_csv(&result.rows, &mut csv)?;
        out.write("ablation.csv", csv)?;
        let mut echoed = config.to_map();
        echoed.remove("variant");
        let names: Vec<&str> = variants.iter().map(|v| v.as_str()).collect();
        echoed.insert("variants".into(), names.join(","));
        out.write_config(&echoed)?;
        Ok(())
    })
}
