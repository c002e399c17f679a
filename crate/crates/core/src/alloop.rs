//! The active-learning driver: initialize, then iterate
//! train -> score pool -> query -> annotate -> evaluate, producing per-step
//! metrics for any strategy. The whole run is a pure function of its config
//! (wall-clock fields aside).

use crate::error::{Error, Result};
use crate::inference::{abstraction_response, image_descriptor, mc_inferences, uncertainty_score};
use crate::metrics::{dice, mean_surface_distance, StepMetrics};
use crate::micronet::{init_params, train, ForwardMode, Hyper, ModelParams};
use crate::rng;
use crate::selection::{query, PoolFeatures, QueryBatch, Strategy, StrategyKind};
use crate::synthdata::{
    generate_dataset, initial_split, oracle_annotate, Dataset, PoolState, Sample, SampleId,
};
use crate::tensor::{argmax_channels, Tensor};
use serde::Serialize;
use std::time::Instant;

/// How the entropy-loss weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// `1 / (360 * C_a * H_a * W_a)`, scaling inversely with the abstraction
    /// layer size.
    Auto,
    /// No entropy regularization.
    Off,
    /// An explicit weight.
    Fixed(f64),
}

/// Whether each stage retrains from a fresh initialization or continues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    FromScratch,
    Continue,
}

/// Every tunable of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub n_cl: usize,
    pub n_ch: usize,
    pub n_initial: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub strategy: Strategy,
    pub n_i: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub lambda_mode: LambdaMode,
    pub n_al_steps: usize,
    pub train_steps_per_stage: usize,
    pub retrain_mode: RetrainMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_samples: 300,
            height: 32,
            width: 32,
            n_cl: 3,
            n_ch: 8,
            n_initial: 16,
            n_val: 20,
            n_test: 60,
            strategy: Strategy {
                kind: StrategyKind::Ranked(crate::selection::RepMetric::EntropyContentDistance),
                n_unc: 16,
                n_rep: 8,
            },
            n_i: 17,
            learning_rate: 5e-4,
            dropout_rate: 0.5,
            batch_size: 8,
            lambda_mode: LambdaMode::Auto,
            n_al_steps: 6,
            train_steps_per_stage: 500,
            retrain_mode: RetrainMode::FromScratch,
        }
    }
}

impl RunConfig {
    /// Abstraction-layer element count `C_a * H_a * W_a` of this architecture.
    pub fn abstraction_size(&self) -> usize {
        2 * self.n_ch * (self.height / 2) * (self.width / 2)
    }

    /// The entropy-loss weight in effect.
    pub fn effective_lambda(&self) -> f64 {
        match self.lambda_mode {
            LambdaMode::Auto => 1.0 / (360.0 * self.abstraction_size() as f64),
            LambdaMode::Off => 0.0,
            LambdaMode::Fixed(v) => v,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            learning_rate: self.learning_rate,
            dropout_rate: self.dropout_rate,
            lambda: self.effective_lambda(),
            batch_size: self.batch_size,
        }
    }

    pub fn initial_pool_size(&self) -> usize {
        self.n_samples - self.n_initial.min(self.n_samples)
            - self.n_val.min(self.n_samples)
            - self.n_test.min(self.n_samples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_initial == 0 {
            return Err(Error::config("n_initial must be positive"));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test must be positive"));
        }
        if self.n_initial + self.n_val + self.n_test > self.n_samples {
            return Err(Error::config(format!(
                "split sizes {}+{}+{} exceed n_samples = {}",
                self.n_initial, self.n_val, self.n_test, self.n_samples
            )));
        }
        if !(3..=4).contains(&self.n_cl) {
            return Err(Error::config("n_cl must be 3 or 4"));
        }
        if self.n_ch == 0 {
            return Err(Error::config("n_ch must be positive"));
        }
        if self.height < 16 || self.width < 16 || self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::config("image dims must be even and >= 16"));
        }
        if self.n_i < 2 {
            return Err(Error::config("n_i must be >= 2"));
        }
        if self.strategy.n_rep == 0 {
            return Err(Error::config("n_rep must be positive"));
        }
        let pool = self.n_samples - self.n_initial - self.n_val - self.n_test;
        if self.n_al_steps > 0 {
            if pool == 0 {
                return Err(Error::config("pool is empty but n_al_steps > 0"));
            }
            if let StrategyKind::TwoStep(_) = self.strategy.kind {
                if self.strategy.n_rep > self.strategy.n_unc {
                    return Err(Error::config(format!(
                        "n_rep ({}) exceeds n_unc ({})",
                        self.strategy.n_rep, self.strategy.n_unc
                    )));
                }
                if self.strategy.n_unc > pool {
                    return Err(Error::config(format!(
                        "n_unc ({}) exceeds initial pool size ({})",
                        self.strategy.n_unc, pool
                    )));
                }
            }
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(v >= 0.0) {
                return Err(Error::config("fixed lambda must be non-negative"));
            }
        }
        self.strategy
            .check_lambda(self.effective_lambda())
            .map_err(|e| Error::config(format!("{}", e)))?;
        self.hyper()
            .validate()
            .map_err(|e| Error::config(format!("{}", e)))?;
        Ok(())
    }
}

/// Per-test-sample evaluation values behind a step's aggregate metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalDetail {
    /// Mean foreground Dice per test sample, in ascending sample-id order.
    pub per_sample_dice: Vec<f64>,
    /// Mean foreground MSD per test sample, same order.
    pub per_sample_msd: Vec<f64>,
}

/// Aggregate evaluation of one model over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Per foreground class (class 1 first).
    pub dice_per_class: Vec<f64>,
    pub dice_mean_fg: f64,
    pub msd_per_class: Vec<f64>,
    pub msd_mean_fg: f64,
    pub detail: EvalDetail,
}

/// One evaluated stage of a run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub metrics: StepMetrics,
    pub detail: EvalDetail,
    pub n_annotated: usize,
    pub query: Option<QueryBatch>,
}

/// Everything produced by one active-learning run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: RunConfig,
    pub steps: Vec<StepRecord>,
    pub truncated: bool,
    pub final_params: ModelParams,
}

/// Score predicted label maps against ground truth. Pairs are aggregated in
/// ascending sample-id order, so the result is independent of input order.
pub fn evaluate_predictions(
    pairs: &[(SampleId, Tensor, &Tensor)],
    n_cl: usize,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::input("test set must be non-empty"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| pairs[i].0);

    let n_fg = n_cl - 1;
    let mut dice_sum = vec![0.0f64; n_fg];
    let mut msd_sum = vec![0.0f64; n_fg];
    let mut per_sample_dice = Vec::with_capacity(pairs.len());
    let mut per_sample_msd = Vec::with_capacity(pairs.len());
    for &i in &order {
        let (_, ref pred, truth) = pairs[i];
        let mut d_fg = 0.0f64;
        let mut m_fg = 0.0f64;
        for cls in 1..n_cl {
            let d = dice(pred, truth, cls)?;
            let m = mean_surface_distance(pred, truth, cls)?;
            dice_sum[cls - 1] += d;
            msd_sum[cls - 1] += m;
            d_fg += d;
            m_fg += m;
        }
        per_sample_dice.push(d_fg / n_fg as f64);
        per_sample_msd.push(m_fg / n_fg as f64);
    }
    let n = pairs.len() as f64;
    let dice_per_class: Vec<f64> = dice_sum.iter().map(|s| s / n).collect();
    let msd_per_class: Vec<f64> = msd_sum.iter().map(|s| s / n).collect();
    Ok(Evaluation {
        dice_mean_fg: dice_per_class.iter().sum::<f64>() / n_fg as f64,
        msd_mean_fg: msd_per_class.iter().sum::<f64>() / n_fg as f64,
        dice_per_class,
        msd_per_class,
        detail: EvalDetail {
            per_sample_dice,
            per_sample_msd,
        },
    })
}

/// Deterministic-mode inference over the test samples, argmax prediction,
/// per-class and mean-foreground Dice/MSD.
pub fn evaluate_model(params: &ModelParams, test: &[&Sample]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::input("test set must be non-empty"));
    }
    let mut pairs = Vec::with_capacity(test.len());
    for s in test {
        let logits =
            crate::micronet::forward_logits(params, &s.image, ForwardMode::Deterministic)?;
        let pred = argmax_channels(&logits)?;
        pairs.push((s.id, pred, &s.label));
    }
    evaluate_predictions(&pairs, params.n_cl)
}

fn train_stage(
    config: &RunConfig,
    dataset: &Dataset,
    state: &PoolState,
    params: ModelParams,
    stage: u64,
    hyper: &Hyper,
) -> Result<ModelParams> {
    let annotated: Vec<(&Tensor, &Tensor)> = state
        .annotated
        .iter()
        .map(|id| {
            let s = dataset.get(*id).expect("annotated id exists");
            (&s.image, &s.label)
        })
        .collect();
    let (params, _history) = train(
        params,
        &annotated,
        hyper,
        config.train_steps_per_stage,
        rng::stream_seed(config.seed, stage, "train", 0),
    )?;
    Ok(params)
}

/// Run the full active-learning experiment described by `config`.
///
/// Randomness is derived from `config.seed` through tagged streams
/// (see [`crate::rng`]): dataset generation, the split, per-stage parameter
/// initialization and training, per-sample MC scoring, and the RAND query
/// each own a stream.
pub fn run_active_learning(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let samples = generate_dataset(
        config.seed,
        config.n_samples,
        config.height,
        config.width,
        config.n_cl,
    )?;
    let dataset = Dataset::new(samples, config.n_cl)?;
    let mut state = initial_split(
        dataset.samples(),
        config.seed,
        config.n_initial,
        config.n_val,
        config.n_test,
    )?;
    let initial_pool = state.pool.len();
    let hyper = config.hyper();
    let lambda = config.effective_lambda();
    let foreground: Vec<usize> = (1..config.n_cl).collect();
    let test_samples: Vec<&Sample> = state
        .test
        .iter()
        .map(|id| dataset.get(*id).expect("test id exists"))
        .collect();

    let mut steps: Vec<StepRecord> = Vec::with_capacity(config.n_al_steps + 1);
    let mut truncated = false;

    // Stage 0: initial model.
    let stage_start = Instant::now();
    let mut params = init_params(
        rng::stream_seed(config.seed, 0, "init", 0),
        config.n_ch,
        config.n_cl,
    );
    params = train_stage(config, &dataset, &state, params, 0, &hyper)?;
    let eval = evaluate_model(&params, &test_samples)?;
    steps.push(StepRecord {
        metrics: StepMetrics {
            step: 0,
            pool_fraction: 0.0,
            dice_per_class: eval.dice_per_class.clone(),
            dice_mean_fg: eval.dice_mean_fg,
            msd_per_class: eval.msd_per_class.clone(),
            msd_mean_fg: eval.msd_mean_fg,
            wall_time_s: stage_start.elapsed().as_secs_f64(),
        },
        detail: eval.detail,
        n_annotated: state.annotated.len(),
        query: None,
    });

    for stage in 1..=config.n_al_steps {
        if state.pool.is_empty() {
            truncated = true;
            break;
        }
        let stage_start = Instant::now();
        let pool_ids: Vec<SampleId> = state.pool.iter().copied().collect();

        // Pool scoring: MC-dropout uncertainty for every pool sample.
        let mut uncertainty = Vec::with_capacity(pool_ids.len());
        for &id in &pool_ids {
            let s = dataset.get(id).expect("pool id exists");
            let stack = mc_inferences(
                &params,
                &s.image,
                config.n_i,
                config.dropout_rate,
                rng::stream_seed(config.seed, stage as u64, "mc-score", u64::from(id.0)),
                id,
            )?;
            uncertainty.push(uncertainty_score(&stack, &foreground)?);
        }

        // Representativeness features, only what the strategy needs.
        let mut features = PoolFeatures::default();
        if let Some(metric) = config.strategy.kind.rep_metric() {
            use crate::selection::RepMetric;
            for &id in &pool_ids {
                let s = dataset.get(id).expect("pool id exists");
                let abst = abstraction_response(&params, &s.image)?;
                match metric {
                    RepMetric::ImageDescriptor => {
                        features.descriptors.insert(id, image_descriptor(id, &abst));
                    }
                    RepMetric::ContentDistance | RepMetric::EntropyContentDistance => {
                        features.responses.insert(id, abst);
                    }
                }
            }
        }

        let batch = query(
            &config.strategy,
            &pool_ids,
            &uncertainty,
            &features,
            rng::stream_seed(config.seed, stage as u64, "query", 0),
            lambda,
        )?;
        oracle_annotate(&dataset, &mut state, &batch.ids)?;

        params = match config.retrain_mode {
            RetrainMode::FromScratch => {
                // Every stage restarts from the same seed-derived weights, so
                // per-stage metrics differ only through the annotated data.
                let fresh = init_params(
                    rng::stream_seed(config.seed, 0, "init", 0),
                    config.n_ch,
                    config.n_cl,
                );
                train_stage(config, &dataset, &state, fresh, stage as u64, &hyper)?
            }
            RetrainMode::Continue => {
                train_stage(config, &dataset, &state, params, stage as u64, &hyper)?
            }
        };

        let eval = evaluate_model(&params, &test_samples)?;
        let annotated_beyond_initial = state.annotated.len() - config.n_initial;
        steps.push(StepRecord {
            metrics: StepMetrics {
                step: stage,
                pool_fraction: if initial_pool == 0 {
                    0.0
                } else {
                    annotated_beyond_initial as f64 / initial_pool as f64
                },
                dice_per_class: eval.dice_per_class.clone(),
                dice_mean_fg: eval.dice_mean_fg,
                msd_per_class: eval.msd_per_class.clone(),
                msd_mean_fg: eval.msd_mean_fg,
                wall_time_s: stage_start.elapsed().as_secs_f64(),
            },
            detail: eval.detail,
            n_annotated: state.annotated.len(),
            query: Some(batch),
        });
    }

    Ok(RunRecord {
        config: config.clone(),
        steps,
        truncated,
        final_params: params,
    })
}
