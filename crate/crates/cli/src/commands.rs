//! Implementations of the `generate`, `run`, `score`, and `compare`
//! commands.

use crate::checkpoint;
use crate::config::{apply_overrides, load_config};
use crate::csvio;
use crate::dataset_io;
use crate::error::{io_err, CliError, CliResult};
use alseg_core::alloop::{run_active_learning, RunConfig, RunRecord, StepRecord};
use alseg_core::inference::{abstraction_response, image_descriptor, mc_inferences, uncertainty_score};
use alseg_core::metrics::paired_t_test_one_sided;
use alseg_core::rng::stream_seed;
use alseg_core::selection::QueryBatch;
use alseg_core::synthdata::{generate_dataset, initial_split};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Generate a dataset directory from a config: tensor files plus manifest.
pub fn cmd_generate(
    config_path: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    quiet: bool,
) -> CliResult<()> {
    let mut config = load_config(config_path)?;
    apply_overrides(&mut config, seed, None)?;
    config.validate().map_err(CliError::from)?;
    let samples = generate_dataset(
        config.seed,
        config.n_samples,
        config.height,
        config.width,
        config.n_cl,
    )?;
    let state = initial_split(
        &samples,
        config.seed,
        config.n_initial,
        config.n_val,
        config.n_test,
    )?;
    dataset_io::write_dataset(out_dir, &config, &samples, &state)?;
    if !quiet {
        println!(
            "wrote {} samples ({} annotated, {} pool, {} validation, {} test) to {}",
            samples.len(),
            state.annotated.len(),
            state.pool.len(),
            state.validation.len(),
            state.test.len(),
            out_dir.display()
        );
    }
    Ok(())
}

/// Population standard deviation.
fn std_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Serialize)]
struct ManifestStep<'a> {
    step: usize,
    pool_fraction: f64,
    n_annotated: usize,
    dice_mean: f64,
    dice_std: f64,
    msd_mean: f64,
    msd_std: f64,
    dice_per_class: &'a [f64],
    msd_per_class: &'a [f64],
    query: Option<&'a QueryBatch>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    truncated: bool,
    checkpoint: &'a str,
    steps: Vec<ManifestStep<'a>>,
}

fn manifest_step(rec: &StepRecord) -> ManifestStep<'_> {
    ManifestStep {
        step: rec.metrics.step,
        pool_fraction: rec.metrics.pool_fraction,
        n_annotated: rec.n_annotated,
        dice_mean: rec.metrics.dice_mean_fg,
        dice_std: std_of(&rec.detail.per_sample_dice),
        msd_mean: rec.metrics.msd_mean_fg,
        msd_std: std_of(&rec.detail.per_sample_msd),
        dice_per_class: &rec.metrics.dice_per_class,
        msd_per_class: &rec.metrics.msd_per_class,
        query: rec.query.as_ref(),
    }
}

pub const METRICS_HEADER: [&str; 10] = [
    "strategy",
    "seed",
    "step",
    "pool_fraction",
    "n_annotated",
    "dice_mean",
    "dice_std",
    "msd_mean",
    "msd_std",
    "wall_time_s",
];

fn metrics_csv(record: &RunRecord) -> String {
    let mut doc = String::new();
    csvio::write_row(&mut doc, &METRICS_HEADER.map(String::from));
    for rec in &record.steps {
        csvio::write_row(
            &mut doc,
            &[
                record.config.strategy.kind.name().to_string(),
                record.config.seed.to_string(),
                rec.metrics.step.to_string(),
                csvio::fmt_f64(rec.metrics.pool_fraction),
                rec.n_annotated.to_string(),
                csvio::fmt_f64(rec.metrics.dice_mean_fg),
                csvio::fmt_f64(std_of(&rec.detail.per_sample_dice)),
                csvio::fmt_f64(rec.metrics.msd_mean_fg),
                csvio::fmt_f64(std_of(&rec.detail.per_sample_msd)),
                csvio::fmt_f64(rec.metrics.wall_time_s),
            ],
        );
    }
    doc
}

/// Run a full active-learning experiment and persist metrics CSV, JSON
/// manifest, and the final model checkpoint.
pub fn cmd_run(
    config_path: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    strategy: Option<&str>,
    quiet: bool,
) -> CliResult<RunRecord> {
    let mut config = load_config(config_path)?;
    apply_overrides(&mut config, seed, strategy)?;
    config.validate().map_err(CliError::from)?;
    let record = run_active_learning(&config)?;

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(&record)).map_err(|e| io_err(&csv_path, e))?;

    let manifest = RunManifest {
        config: &record.config,
        truncated: record.truncated,
        checkpoint: "model.ckpt",
        steps: record.steps.iter().map(manifest_step).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::runtime(format!("manifest serialization: {}", e)))?;
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    checkpoint::write_file(&out_dir.join("model.ckpt"), &record.final_params)?;

    if !quiet {
        for rec in &record.steps {
            println!(
                "step {:>2}: annotated {:>4} ({:>5.1}% of pool)  dice {:.3}  msd {:.2}  [{:.1}s]",
                rec.metrics.step,
                rec.n_annotated,
                100.0 * rec.metrics.pool_fraction,
                rec.metrics.dice_mean_fg,
                rec.metrics.msd_mean_fg,
                rec.metrics.wall_time_s
            );
        }
        if record.truncated {
            println!("pool exhausted early; run truncated");
        }
    }
    Ok(record)
}

/// Score every sample of a stored dataset with a checkpointed model:
/// MC-dropout uncertainty plus the image descriptor, one CSV row per sample.
///
/// MC seeds are derived exactly as the run driver derives them at the given
/// stage, so scores can be cross-checked against a run's query decisions.
pub fn cmd_score(
    checkpoint_path: &Path,
    dataset_dir: &Path,
    out_path: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
    stage: u64,
    quiet: bool,
) -> CliResult<()> {
    let mut config = load_config(config_path)?;
    apply_overrides(&mut config, seed, None)?;
    let params = checkpoint::read_file(checkpoint_path)?;
    let stored = dataset_io::read_dataset(dataset_dir)?;
    if stored.n_cl != params.n_cl {
        return Err(CliError::config(format!(
            "checkpoint has {} classes but dataset has {}",
            params.n_cl, stored.n_cl
        )));
    }
    let foreground: Vec<usize> = (1..params.n_cl).collect();

    let mut doc = String::new();
    let mut header = vec!["sample_id".to_string(), "uncertainty".to_string()];
    header.extend((0..2 * params.n_ch).map(|i| format!("d{}", i)));
    csvio::write_row(&mut doc, &header);

    let shape_is_config =
        |e: CliError| -> CliError { CliError::Config(format!("checkpoint/data mismatch: {}", e)) };
    for s in &stored.samples {
        let stack = mc_inferences(
            &params,
            &s.image,
            config.n_i,
            config.dropout_rate,
            stream_seed(config.seed, stage, "mc-score", u64::from(s.id.0)),
            s.id,
        )
        .map_err(CliError::from)
        .map_err(shape_is_config)?;
        let unc = uncertainty_score(&stack, &foreground)?;
        let abst = abstraction_response(&params, &s.image)?;
        let descriptor = image_descriptor(s.id, &abst);
        let mut row = vec![s.id.to_string(), csvio::fmt_f64(unc)];
        row.extend(descriptor.vec.iter().map(|&v| csvio::fmt_f64(f64::from(v))));
        csvio::write_row(&mut doc, &row);
    }
    std::fs::write(out_path, doc).map_err(|e| io_err(out_path, e))?;
    if !quiet {
        println!(
            "scored {} samples into {}",
            stored.samples.len(),
            out_path.display()
        );
    }
    Ok(())
}

/// Per-seed dice series of one strategy, keyed by step.
type SeriesMap = BTreeMap<String, BTreeMap<u64, BTreeMap<usize, f64>>>;

fn read_metrics(dir: &Path, into: &mut SeriesMap) -> CliResult<()> {
    let path = dir.join("metrics.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let rows = csvio::parse(&text)?;
    let Some((header, body)) = rows.split_first() else {
        return Err(CliError::config(format!("{}: empty CSV", path.display())));
    };
    let col = |name: &str| -> CliResult<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("{}: missing column {}", path.display(), name)))
    };
    let (c_strategy, c_seed, c_step, c_dice) =
        (col("strategy")?, col("seed")?, col("step")?, col("dice_mean")?);
    for row in body {
        let strategy = row[c_strategy].clone();
        let seed: u64 = row[c_seed]
            .parse()
            .map_err(|_| CliError::config(format!("{}: bad seed", path.display())))?;
        let step: usize = row[c_step]
            .parse()
            .map_err(|_| CliError::config(format!("{}: bad step", path.display())))?;
        let dice: f64 = row[c_dice]
            .parse()
            .map_err(|_| CliError::config(format!("{}: bad dice_mean", path.display())))?;
        let slot = into
            .entry(strategy)
            .or_default()
            .entry(seed)
            .or_default()
            .entry(step)
            .or_insert(dice);
        if *slot != dice {
            return Err(CliError::config(format!(
                "{}: conflicting dice for an existing (strategy, seed, step) row",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Outcome of one seed's paired comparison.
struct SeedComparison {
    mean_a: f64,
    mean_b: f64,
    t: f64,
    p: f64,
}

/// Paired one-sided test over the step grid; degenerate zero-variance cases
/// resolve by the sign of the constant difference.
fn compare_series(a: &[f64], b: &[f64]) -> CliResult<SeedComparison> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mean_a, mean_b) = (mean(a), mean(b));
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let all_zero = diffs.iter().all(|&d| d == 0.0);
    let first = diffs.first().copied().unwrap_or(0.0);
    let constant = diffs.iter().all(|&d| d == first);
    let (t, p) = if all_zero {
        (0.0, 0.5)
    } else if constant {
        if first > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 1.0)
        }
    } else {
        paired_t_test_one_sided(a, b)?
    };
    Ok(SeedComparison { mean_a, mean_b, t, p })
}

/// Compare run directories: for every ordered strategy pair and seed, a
/// one-sided paired t-test of mean Dice over the active-learning steps
/// (step 0 precedes any querying and is excluded), plus the count of seeds
/// where the first strategy is significantly better at the 0.05 level.
pub fn cmd_compare(run_dirs: &[&Path], out_path: &Path, quiet: bool) -> CliResult<()> {
    if run_dirs.len() < 2 {
        return Err(CliError::config("compare needs at least 2 run directories"));
    }
    let mut series: SeriesMap = BTreeMap::new();
    for dir in run_dirs {
        read_metrics(dir, &mut series)?;
    }

    // All (strategy, seed) series must share one step grid, and all
    // strategies one seed set.
    let mut grid: Option<Vec<usize>> = None;
    let mut seed_set: Option<BTreeSet<u64>> = None;
    for (strategy, by_seed) in &series {
        let seeds: BTreeSet<u64> = by_seed.keys().copied().collect();
        match &seed_set {
            None => seed_set = Some(seeds),
            Some(expect) => {
                if *expect != seeds {
                    return Err(CliError::config(format!(
                        "strategy {} has seeds {:?}, expected {:?}",
                        strategy, seeds, expect
                    )));
                }
            }
        }
        for (seed, by_step) in by_seed {
            let steps: Vec<usize> = by_step.keys().copied().collect();
            match &grid {
                None => grid = Some(steps),
                Some(expect) => {
                    if *expect != steps {
                        return Err(CliError::config(format!(
                            "strategy {} seed {} has steps {:?}, expected {:?}",
                            strategy, seed, steps, expect
                        )));
                    }
                }
            }
        }
    }
    let grid = grid.ok_or_else(|| CliError::config("no runs found"))?;
    let al_steps: Vec<usize> = grid.iter().copied().filter(|&s| s > 0).collect();
    if al_steps.is_empty() {
        return Err(CliError::config("runs contain no active-learning steps"));
    }

    let strategies: Vec<&String> = series.keys().collect();
    let pairs: Vec<(String, String)> = if strategies.len() == 1 {
        vec![(strategies[0].clone(), strategies[0].clone())]
    } else {
        let mut p = Vec::new();
        for a in &strategies {
            for b in &strategies {
                if a != b {
                    p.push(((*a).clone(), (*b).clone()));
                }
            }
        }
        p
    };

    let mut doc = String::new();
    csvio::write_row(
        &mut doc,
        &[
            "strategy_a".into(),
            "strategy_b".into(),
            "seed".into(),
            "mean_dice_a".into(),
            "mean_dice_b".into(),
            "t_stat".into(),
            "p_value".into(),
            "significant".into(),
            "wins_a".into(),
        ],
    );
    for (name_a, name_b) in &pairs {
        let seeds: Vec<u64> = series[name_a].keys().copied().collect();
        let mut rows = Vec::new();
        let mut wins = 0usize;
        for &seed in &seeds {
            let a: Vec<f64> = al_steps.iter().map(|s| series[name_a][&seed][s]).collect();
            let b: Vec<f64> = al_steps.iter().map(|s| series[name_b][&seed][s]).collect();
            let cmp = compare_series(&a, &b)?;
            let significant = cmp.p < 0.05;
            if significant {
                wins += 1;
            }
            rows.push((seed, cmp, significant));
        }
        for (seed, cmp, significant) in rows {
            csvio::write_row(
                &mut doc,
                &[
                    name_a.clone(),
                    name_b.clone(),
                    seed.to_string(),
                    csvio::fmt_f64(cmp.mean_a),
                    csvio::fmt_f64(cmp.mean_b),
                    csvio::fmt_f64(cmp.t),
                    csvio::fmt_f64(cmp.p),
                    significant.to_string(),
                    wins.to_string(),
                ],
            );
        }
        if !quiet {
            println!(
                "{} vs {}: significantly better in {} of {} seeds",
                name_a,
                name_b,
                wins,
                seeds.len()
            );
        }
    }
    std::fs::write(out_path, doc).map_err(|e| io_err(out_path, e))
}
