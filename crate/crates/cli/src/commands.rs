//! Subcommand implementations. Each command reads the previous stage's
//! artifact, writes its own, and prints a short summary; artifact bytes are
//! deterministic for a fixed config and seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;

use hawk_core::eval::{
    balance_ratios, diversity, f1_scores, match_events, state_identify_from_reports,
    write_metric_csv, write_metric_json, MetricReport, DEFAULT_MATCH_TOLERANCE,
};
use hawk_core::model::{
    calibrate_from_predictions, load_model, predict_stream, save_model, EventClassifier,
    EventReport, VoteState,
};
use hawk_core::pipeline::{
    class_appliance, harmonic_features, labeled_events, prepare_training_set, read_training_file,
    write_training_file, CycleRing, LabelMap,
};
use hawk_core::schedule::{
    generate_schedule, overlap_ratio, read_schedule_jsonl, schedule_stats, write_schedule_jsonl,
    EventSchedule,
};
use hawk_core::simulate::{
    execute_schedule, read_trace, write_trace, Catalog, ExecuteOptions, Trace,
};
use hawk_core::syncsim::{error_cdf, run_comparison, write_cdf_csv, SyncConfig, TimestampJitter};
use hawk_core::{HawkError, Result};

use crate::config::ExperimentConfig;

/// Resolved invocation context: config with overrides applied, output
/// directory created.
pub struct Ctx {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn new(config_path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<Ctx> {
        let mut config = match config_path {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
            config.schedule.rng_seed = s;
        }
        if let Some(o) = out {
            config.out_dir = o.to_path_buf();
        }
        let out_dir = config.out_dir.clone();
        std::fs::create_dir_all(&out_dir)?;
        Ok(Ctx { config, out_dir })
    }

    pub fn catalog(&self) -> Result<Catalog> {
        self.config.catalog()
    }

    pub(crate) fn path(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default_name))
    }
}

#[derive(Args, Debug)]
pub struct GenScheduleArgs {
    /// Override the configured number of rounds.
    #[arg(long)]
    pub rounds: Option<u32>,
    /// Override the schedule RNG seed (e.g. for a held-out test schedule).
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    /// Output path; defaults to <out>/schedule.jsonl.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print the state-overlap ratio against an existing schedule file.
    #[arg(long)]
    pub overlap_with: Option<PathBuf>,
}

pub fn gen_schedule(ctx: &Ctx, args: &GenScheduleArgs) -> Result<()> {
    let mut params = ctx.config.schedule.clone();
    if let Some(r) = args.rounds {
        params.rounds = r;
    }
    if let Some(s) = args.schedule_seed {
        params.rng_seed = s;
    }
    let schedule = generate_schedule(&params)?;
    let stats = schedule_stats(&schedule)?;

    let out = ctx.path(&args.output, "schedule.jsonl");
    write_schedule_jsonl(&schedule, BufWriter::new(File::create(&out)?))?;

    println!(
        "schedule: {} events over {} appliances, horizon {} cycles -> {}",
        stats.events_total,
        params.n_appliances,
        stats.horizon_cycles,
        out.display()
    );
    println!(
        "balance: event BR {:.3}, state BR {:.3}, on/off BR {:.3}, unique states {}",
        stats.event_br, stats.state_br, stats.avg_on_off_br, stats.unique_states
    );
    if let Some(other_path) = &args.overlap_with {
        let other = read_schedule_jsonl(BufReader::new(File::open(other_path)?))?;
        let ratio = overlap_ratio(&other, &schedule)?;
        println!(
            "state overlap vs {}: {:.4}",
            other_path.display(),
            ratio
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Schedule file to execute; defaults to <out>/schedule.jsonl.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Output trace path; defaults to <out>/trace.hwk.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Retain per-appliance currents (needed for SINR estimation).
    #[arg(long)]
    pub keep_individual: bool,
    /// Trace length in cycles; defaults to the schedule horizon.
    #[arg(long)]
    pub horizon: Option<u64>,
}

fn load_schedule(path: &Path) -> Result<EventSchedule> {
    read_schedule_jsonl(BufReader::new(File::open(path)?))
}

pub fn simulate(ctx: &Ctx, args: &SimulateArgs) -> Result<()> {
    let schedule = load_schedule(&ctx.path(&args.schedule, "schedule.jsonl"))?;
    let catalog = ctx.catalog()?;
    let options = ExecuteOptions {
        horizon_cycles: args.horizon,
        keep_individual: args.keep_individual,
    };
    let trace = execute_schedule(
        &schedule,
        &catalog.appliances,
        &ctx.config.grid,
        ctx.config.seed,
        &options,
    )?;
    let out = ctx.path(&args.output, "trace.hwk");
    write_trace(&out, &trace)?;
    println!(
        "trace: {} cycles ({:.3} h), {} appliances, {} samples/cycle -> {}",
        trace.frames.len(),
        trace.duration_hours(),
        trace.n_appliances,
        trace.cycle_len(),
        out.display()
    );
    if let Some(residual) = trace.kirchhoff_max_residual() {
        println!("kirchhoff closure: max residual {residual:.3e} A");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Labeled trace to harvest; defaults to <out>/trace.hwk.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output training file; defaults to <out>/training.bin.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Override the configured differential interval D.
    #[arg(long)]
    pub diff_interval: Option<usize>,
}

pub fn prepare(ctx: &Ctx, args: &PrepareArgs) -> Result<()> {
    let trace = read_trace(&ctx.path(&args.trace, "trace.hwk"))?;
    let catalog = ctx.catalog()?;
    let mut cfg = ctx.config.pipeline.clone();
    if let Some(d) = args.diff_interval {
        cfg.diff_interval = d;
    }
    let set = prepare_training_set(&trace, &catalog.appliances, &cfg)?;
    let out = ctx.path(&args.output, "training.bin");
    write_training_file(&out, &set.samples, &LabelMap::from_specs(&catalog.appliances))?;

    let populated = set.class_counts.iter().filter(|&&c| c > 0).count();
    println!(
        "events: {} located, {} dropped; {} diffs filtered out",
        set.located, set.dropped_events, set.filtered_out
    );
    println!(
        "samples: {} across {} populated classes -> {}",
        set.samples.len(),
        populated,
        out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training file; defaults to <out>/training.bin.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trace used to calibrate voting thresholds; repeat the flag to pool
    /// several traces, giving each class more events to calibrate against.
    /// Without it every class falls back to the default threshold
    /// ceil(D/2).
    #[arg(long)]
    pub calibrate_trace: Vec<PathBuf>,
    /// Output model path; defaults to <out>/model.hwkm.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let (samples, label_map) = read_training_file(&ctx.path(&args.data, "training.bin"))?;
    let classes = match &label_map {
        Some(m) => m.classes.len() as u16,
        None => hawk_core::pipeline::n_classes(ctx.catalog()?.appliances.len() as u32) as u16,
    };
    let started = Instant::now();
    let model = EventClassifier::train(&samples, classes, &ctx.config.train)?;
    let train_secs = started.elapsed().as_secs_f64();

    let d = ctx.config.pipeline.diff_interval;
    let thresholds = if args.calibrate_trace.is_empty() {
        eprintln!(
            "warning: no calibration trace; all thresholds default to {}",
            d.div_ceil(2)
        );
        vec![d.div_ceil(2) as u32; classes as usize]
    } else {
        // Concatenate the traces on a shared cycle axis with an idle gap
        // between them so no vote window mixes evidence across traces.
        let mut predictions: Vec<(u64, u16)> = Vec::new();
        let mut truth: Vec<(u64, u16)> = Vec::new();
        let mut offset = 0u64;
        for path in &args.calibrate_trace {
            let trace = read_trace(path)?;
            let span = trace.frames.last().map(|f| f.cycle_id + 1).unwrap_or(0);
            predictions.extend(
                predict_stream(&trace, &model, d)?
                    .into_iter()
                    .map(|(cy, l)| (cy + offset, l)),
            );
            truth.extend(
                labeled_events(&trace)
                    .into_iter()
                    .map(|(cy, c)| (cy + offset, c)),
            );
            let end = offset + span;
            predictions
                .extend((0..d as u64).map(|i| (end + i, hawk_core::pipeline::IDLE_CLASS)));
            offset = end + d as u64;
        }
        let calibration = calibrate_from_predictions(&predictions, &truth, d, classes)?;
        if !calibration.defaulted_classes.is_empty() {
            eprintln!(
                "warning: {} classes absent from the calibration traces; \
                 their thresholds default to {}",
                calibration.defaulted_classes.len(),
                d.div_ceil(2)
            );
        }
        calibration.thresholds
    };

    let out = ctx.path(&args.output, "model.hwkm");
    save_model(&out, &model, &thresholds)?;
    println!(
        "model: {} rounds x {} classes on {} samples ({:.1} s) -> {}",
        model.n_rounds(),
        classes,
        samples.len(),
        train_secs,
        out.display()
    );
    println!(
        "training accuracy: {:.4}; thresholds in [{}, {}]",
        model.accuracy(&samples)?,
        thresholds.iter().min().copied().unwrap_or(0),
        thresholds.iter().max().copied().unwrap_or(0)
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Trace to stream; defaults to <out>/trace.hwk.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Model file; defaults to <out>/model.hwkm.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output report stream (JSON lines); defaults to <out>/reports.jsonl.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn infer(ctx: &Ctx, args: &InferArgs) -> Result<()> {
    let trace = read_trace(&ctx.path(&args.trace, "trace.hwk"))?;
    let (model, thresholds) = load_model(&ctx.path(&args.model, "model.hwkm"))?;
    let d = ctx.config.pipeline.diff_interval;

    // Deliberately single-threaded: the latency figure models one stream
    // on one core, mirroring a meter-side deployment.
    let mut ring = CycleRing::new(d)?;
    let mut vote = VoteState::new(d, thresholds)?;
    let mut reports: Vec<EventReport> = Vec::new();
    let started = Instant::now();
    for frame in &trace.frames {
        if let Some(diff) = ring.push(frame.cycle_id, &frame.aggregate) {
            let features = harmonic_features(&diff);
            let label = model.predict(&features.values)?;
            if let Some(report) = vote.vote_step(label, diff.cycle_id_new) {
                reports.push(report);
            }
        }
    }
    let elapsed = started.elapsed();

    let out = ctx.path(&args.output, "reports.jsonl");
    let mut w = BufWriter::new(File::create(&out)?);
    for report in &reports {
        let line = serde_json::to_string(report)
            .map_err(|e| HawkError::Format(format!("report encode: {e}")))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let cycles = trace.frames.len().max(1);
    let mean_ms = elapsed.as_secs_f64() * 1e3 / cycles as f64;
    println!(
        "inference: {} cycles -> {} reports -> {}",
        trace.frames.len(),
        reports.len(),
        out.display()
    );
    println!(
        "mean per-cycle latency: {:.4} ms ({} the 20 ms real-time budget)",
        mean_ms,
        if mean_ms < 20.0 { "within" } else { "EXCEEDS" }
    );
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<EventReport>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report = serde_json::from_str(&line)
            .map_err(|e| HawkError::Format(format!("reports line {}: {e}", i + 1)))?;
        out.push(report);
    }
    Ok(out)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth trace; defaults to <out>/trace.hwk.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Report stream to score; defaults to <out>/reports.jsonl.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Metric JSON output; defaults to <out>/metrics.json.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-class CSV output; defaults to <out>/metrics.csv.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Score a report stream against trace labels and emit the metric bundle.
pub fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let trace = read_trace(&ctx.path(&args.trace, "trace.hwk"))?;
    let reports = read_reports(&ctx.path(&args.reports, "reports.jsonl"))?;
    let report = evaluate_reports(&trace, &reports)?;

    let json_out = ctx.path(&args.output, "metrics.json");
    write_metric_json(&json_out, &report)?;
    let csv_out = ctx.path(&args.csv, "metrics.csv");
    write_metric_csv(&csv_out, &report)?;

    println!(
        "event F1: average {:.4}, weighted {:.4} over {} truth events",
        report.average_f1,
        report.weighted_f1,
        report.per_class.values().map(|s| s.support).sum::<u64>()
    );
    if let Some(state) = &report.state_f1 {
        println!("state F1: average {:.4}", state.average_f1);
    }
    println!(
        "balance: event BR {:.3}, state BR {:.3}, on/off BR {:.3}; {} states ({:.2}/h)",
        report.event_br,
        report.state_br,
        report.avg_on_off_br,
        report.unique_states,
        report.diversity_density
    );
    println!("metrics -> {} and {}", json_out.display(), csv_out.display());
    Ok(())
}

/// Shared scoring core, also used by the ablation sweeps.
pub fn evaluate_reports(trace: &Trace, reports: &[EventReport]) -> Result<MetricReport> {
    let truth = labeled_events(trace);
    let predicted: Vec<(u64, u16)> = reports.iter().map(|r| (r.cycle_id, r.class_label)).collect();
    let summary = f1_scores(&match_events(&truth, &predicted, DEFAULT_MATCH_TOLERANCE));

    let n = trace.n_appliances as usize;
    let mut truth_pairs = Vec::with_capacity(truth.len());
    for &(_, class) in &truth {
        let pair = class_appliance(class).ok_or_else(|| {
            HawkError::Degenerate("labeled event stream contains the idle class".into())
        })?;
        truth_pairs.push(pair);
    }
    let mut on_cycles = vec![0u64; n];
    for frame in &trace.frames {
        for (k, slot) in on_cycles.iter_mut().enumerate() {
            if frame.label >> k & 1 == 1 {
                *slot += 1;
            }
        }
    }
    let balance = balance_ratios(&truth_pairs, &on_cycles)?;
    let div = diversity(
        trace.frames.iter().map(|f| f.label),
        trace.duration_hours(),
    )?;
    let state = state_identify_from_reports(trace, reports)?;
    Ok(MetricReport::assemble(summary, balance, div, Some(state)))
}

#[derive(Args, Debug)]
pub struct SyncSimArgs {
    /// Monte-Carlo trial count.
    #[arg(long, default_value_t = 20_000)]
    pub trials: usize,
    /// Disable every noise source (ideal clocks and clean voltage).
    #[arg(long)]
    pub no_noise: bool,
    /// SPT error CDF output; defaults to <out>/sync_spt_cdf.csv.
    #[arg(long)]
    pub spt_csv: Option<PathBuf>,
    /// Baseline error CDF output; defaults to <out>/sync_tsf_cdf.csv.
    #[arg(long)]
    pub tsf_csv: Option<PathBuf>,
}

pub fn sync_sim(ctx: &Ctx, args: &SyncSimArgs) -> Result<()> {
    let mut cfg = SyncConfig {
        n_trials: args.trials,
        seed: ctx.config.seed,
        ..SyncConfig::default()
    };
    if args.no_noise {
        cfg.voltage.amp_noise_rel = 0.0;
        for node in [&mut cfg.node_a, &mut cfg.node_b] {
            node.timestamp_jitter_us = TimestampJitter {
                std_us: 0.0,
                outlier_prob: 0.0,
                outlier_shift_us: 0.0,
            };
        }
    }
    let (spt, tsf, summary) = run_comparison(&cfg)?;

    let spt_out = ctx.path(&args.spt_csv, "sync_spt_cdf.csv");
    write_cdf_csv(
        BufWriter::new(File::create(&spt_out)?),
        &error_cdf(&spt.trials)?,
    )?;
    let tsf_out = ctx.path(&args.tsf_csv, "sync_tsf_cdf.csv");
    write_cdf_csv(BufWriter::new(File::create(&tsf_out)?), &error_cdf(&tsf)?)?;

    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| HawkError::Format(format!("summary encode: {e}")))?;
    std::fs::write(ctx.out_dir.join("sync_summary.json"), format!("{text}\n"))?;
    println!("{text}");
    println!("cdfs -> {} and {}", spt_out.display(), tsf_out.display());
    Ok(())
}
