//! Parameter sweeps: the differential-interval ablation and the balanced
//! versus imbalance-resampled training comparison. Both synthesize their
//! own train and held-out test traces from the experiment config.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use hawk_core::model::{calibrate_thresholds, run_inference, EventClassifier};
use hawk_core::pipeline::{
    augment_pairs, class_appliance, filter_samples, harmonic_features, locate_obvious_events,
    n_classes, prepare_training_set, rms_thresholds, signature_from_spec, PipelineConfig,
    TrainingSample, IDLE_CLASS,
};
use hawk_core::schedule::{generate_schedule, ScheduleEvent, ScheduleParams};
use hawk_core::simulate::{
    execute_schedule, resample_imbalanced, ApplianceSpec, ExecuteOptions, Trace,
};
use hawk_core::{HawkError, Result};

use crate::commands::{evaluate_reports, Ctx};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblateMode {
    /// Sweep the differential interval D.
    Interval,
    /// Balanced versus imbalance-resampled training data.
    Balance,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: AblateMode,
    /// Differential intervals for the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 30, 40, 50])]
    pub intervals: Vec<usize>,
    /// Rounds in the held-out test schedule (default: 3/5 of training).
    #[arg(long)]
    pub test_rounds: Option<u32>,
    /// Output CSV; defaults to <out>/ablate_<mode>.csv.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn ablate(ctx: &Ctx, args: &AblateArgs) -> Result<()> {
    let catalog = ctx.catalog()?;
    let specs = &catalog.appliances;
    let (train_trace, test_trace) = build_traces(ctx, specs, args.test_rounds)?;
    println!(
        "traces: train {} cycles, test {} cycles",
        train_trace.frames.len(),
        test_trace.frames.len()
    );
    match args.mode {
        AblateMode::Interval => interval_sweep(ctx, args, specs, &train_trace, &test_trace),
        AblateMode::Balance => balance_comparison(ctx, args, specs, &train_trace, &test_trace),
    }
}

fn build_traces(
    ctx: &Ctx,
    specs: &[ApplianceSpec],
    test_rounds: Option<u32>,
) -> Result<(Trace, Trace)> {
    let train_params = ctx.config.schedule.clone();
    let test_params = ScheduleParams {
        rounds: test_rounds.unwrap_or_else(|| (train_params.rounds * 3 / 5).max(1)),
        rng_seed: train_params.rng_seed.wrapping_add(1),
        ..train_params.clone()
    };
    let opts = ExecuteOptions::default();
    let train_schedule = generate_schedule(&train_params)?;
    let test_schedule = generate_schedule(&test_params)?;
    let grid = &ctx.config.grid;
    let train_trace = execute_schedule(&train_schedule, specs, grid, ctx.config.seed, &opts)?;
    let test_trace = execute_schedule(
        &test_schedule,
        specs,
        grid,
        ctx.config.seed.wrapping_add(1),
        &opts,
    )?;
    Ok((train_trace, test_trace))
}

/// Train on the given samples, calibrate on the training trace, infer on
/// the held-out trace; returns (event F1, weighted event F1, state F1).
fn run_variant(
    ctx: &Ctx,
    samples: &[TrainingSample],
    train_trace: &Trace,
    test_trace: &Trace,
    d: usize,
) -> Result<(f64, f64, f64)> {
    let classes = n_classes(train_trace.n_appliances) as u16;
    let model = EventClassifier::train(samples, classes, &ctx.config.train)?;
    let calibration = calibrate_thresholds(train_trace, &model, d)?;
    let reports = run_inference(test_trace, &model, &calibration.thresholds, d)?;
    let metrics = evaluate_reports(test_trace, &reports)?;
    let state = metrics.state_f1.as_ref().map_or(0.0, |s| s.average_f1);
    Ok((metrics.average_f1, metrics.weighted_f1, state))
}

fn interval_sweep(
    ctx: &Ctx,
    args: &AblateArgs,
    specs: &[ApplianceSpec],
    train_trace: &Trace,
    test_trace: &Trace,
) -> Result<()> {
    if args.intervals.is_empty() {
        return Err(HawkError::Parameter("no intervals to sweep".into()));
    }
    let mut rows = Vec::new();
    for &d in &args.intervals {
        let mut cfg = ctx.config.pipeline.clone();
        cfg.diff_interval = d;
        let set = prepare_training_set(train_trace, specs, &cfg)?;
        let (event_f1, weighted_f1, state_f1) =
            run_variant(ctx, &set.samples, train_trace, test_trace, d)?;
        println!(
            "[d={d}] {} samples -> event F1 {event_f1:.4}, state F1 {state_f1:.4}",
            set.samples.len()
        );
        rows.push((d, set.samples.len(), event_f1, weighted_f1, state_f1));
    }

    let out = ctx.path(&args.output, "ablate_interval.csv");
    let mut w = BufWriter::new(File::create(&out)?);
    writeln!(w, "d,train_samples,event_f1,weighted_event_f1,state_f1")?;
    for (d, n, e, wf, s) in rows {
        writeln!(w, "{d},{n},{e:.6},{wf:.6},{s:.6}")?;
    }
    w.flush()?;
    println!("sweep -> {}", out.display());
    Ok(())
}

fn balance_comparison(
    ctx: &Ctx,
    args: &AblateArgs,
    specs: &[ApplianceSpec],
    train_trace: &Trace,
    test_trace: &Trace,
) -> Result<()> {
    let cfg = &ctx.config.pipeline;
    let d = cfg.diff_interval;

    let balanced = prepare_training_set(train_trace, specs, cfg)?;
    let (bal_f1, bal_wf, bal_state) =
        run_variant(ctx, &balanced.samples, train_trace, test_trace, d)?;
    println!(
        "[balanced] {} samples -> event F1 {bal_f1:.4}, state F1 {bal_state:.4}",
        balanced.samples.len()
    );

    // Household-style skew: usage falls off quadratically with appliance
    // index, so a few appliances dominate and the tail starves.
    let weights: Vec<f64> = (0..specs.len())
        .map(|k| 1.0 / ((k + 1) as f64).powi(2))
        .collect();
    let idle: Vec<TrainingSample> = balanced
        .samples
        .iter()
        .filter(|s| s.class_label == IDLE_CLASS)
        .cloned()
        .collect();
    let imbalanced =
        imbalanced_training_set(train_trace, specs, cfg, &weights, ctx.config.seed, &idle)?;
    let (imb_f1, imb_wf, imb_state) =
        run_variant(ctx, &imbalanced, train_trace, test_trace, d)?;
    println!(
        "[imbalanced] {} samples -> event F1 {imb_f1:.4}, state F1 {imb_state:.4}",
        imbalanced.len()
    );

    let out = ctx.path(&args.output, "ablate_balance.csv");
    let mut w = BufWriter::new(File::create(&out)?);
    writeln!(w, "variant,train_samples,event_f1,weighted_event_f1,state_f1")?;
    writeln!(
        w,
        "balanced,{},{bal_f1:.6},{bal_wf:.6},{bal_state:.6}",
        balanced.samples.len()
    )?;
    writeln!(
        w,
        "imbalanced,{},{imb_f1:.6},{imb_wf:.6},{imb_state:.6}",
        imbalanced.len()
    )?;
    w.flush()?;
    println!("comparison -> {}", out.display());
    Ok(())
}

/// Training set built from an imbalance-resampled event multiset: every
/// located event is harvested once into a filtered bundle, the event list
/// is reweighted (duplicates model oversampling with replacement), and each
/// occurrence contributes its bundle up to the per-class cap. Idle samples
/// are passed through unchanged so the idle class stays trainable.
fn imbalanced_training_set(
    trace: &Trace,
    specs: &[ApplianceSpec],
    cfg: &PipelineConfig,
    weights: &[f64],
    seed: u64,
    idle: &[TrainingSample],
) -> Result<Vec<TrainingSample>> {
    let thresholds = rms_thresholds(specs, cfg.threshold_frac);
    let located = locate_obvious_events(trace, cfg, &thresholds)?;
    if located.events.is_empty() {
        return Err(HawkError::Degenerate(
            "no located events to resample".into(),
        ));
    }
    let classes = n_classes(trace.n_appliances);
    let mut events_per_class = vec![0usize; classes];
    for ev in &located.events {
        events_per_class[ev.class_label as usize] += 1;
    }
    let cap = if cfg.max_samples_per_class == 0 {
        usize::MAX
    } else {
        cfg.max_samples_per_class
    };
    let cycle_len = trace.frames[0].aggregate.len();

    let mut bundles: Vec<Vec<TrainingSample>> = Vec::with_capacity(located.events.len());
    let mut index: HashMap<(u64, u32), usize> = HashMap::new();
    for ev in &located.events {
        let (appliance, _) = class_appliance(ev.class_label)
            .ok_or_else(|| HawkError::Degenerate("located an idle event".into()))?;
        let spec = &specs[appliance as usize];
        let (pairs, _) =
            augment_pairs(trace, ev.located_cycle, spec.transient_cycles, cfg.n_side)?;
        let (kept, _) = filter_samples(pairs, &signature_from_spec(spec, cycle_len), cfg.min_similarity);
        // Same per-event quota as the balanced preparation, so per-class
        // totals scale with the resampled multiplicities.
        let quota = cap.div_ceil(events_per_class[ev.class_label as usize].max(1));
        let take = quota.min(kept.len());
        let bundle: Vec<TrainingSample> = (0..take)
            .map(|i| {
                let idx = if take == kept.len() {
                    i
                } else {
                    i * kept.len() / take
                };
                TrainingSample {
                    class_label: ev.class_label,
                    features: harmonic_features(&kept[idx]),
                }
            })
            .collect();
        index.insert((ev.located_cycle, appliance), bundles.len());
        bundles.push(bundle);
    }

    let as_events: Vec<ScheduleEvent> = located
        .events
        .iter()
        .map(|ev| {
            let (appliance_id, action) =
                class_appliance(ev.class_label).expect("located events are non-idle");
            ScheduleEvent {
                time_cycle: ev.located_cycle,
                appliance_id,
                action,
            }
        })
        .collect();
    let resampled = resample_imbalanced(&as_events, weights, seed)?;

    let mut out: Vec<TrainingSample> = idle.to_vec();
    let mut counts = vec![0usize; classes];
    for ev in &resampled {
        let Some(&b) = index.get(&(ev.time_cycle, ev.appliance_id)) else {
            continue;
        };
        for sample in &bundles[b] {
            let c = sample.class_label as usize;
            if counts[c] < cap {
                out.push(sample.clone());
                counts[c] += 1;
            }
        }
    }
    Ok(out)
}
