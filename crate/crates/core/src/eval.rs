//! Statistical assessment of the decision models.
//!
//! Every comparison is paired: all three models face the same episode
//! with the same derived random source family, the per-episode distance
//! differences are computed first, and only then averaged. Violation
//! counts, score-sensitivity histograms, and multi-seed replications of
//! the whole split-train-evaluate pipeline round out the harness.

use crate::dataset::{generate_dataset, Dataset, MinMax};
use crate::error::{Error, Result};
use crate::game::GameConfig;
use crate::policy::{
    best_of_k, fit_randomized, train_single_step, train_two_step, DecisionModel, FitSettings,
    RolloutOutcome, TwoStepModel,
};
use crate::rng::{derive_seed, derived_rng};
use crate::scorer::realized_score;
use crate::textio::{fmt_f64, read_file, write_file};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Number of equal-width histogram bins on [0,1] in sensitivity sweeps.
pub const SENSITIVITY_BINS: usize = 20;

/// The reference sweep settings, high to low.
pub const DEFAULT_SWEEP_SETTINGS: [(f64, f64); 3] = [(0.95, 0.98), (0.55, 0.6), (0.15, 0.2)];

// Per-episode random stream slots, one family per episode.
const STREAM_TWO_STEP: u64 = 0;
const STREAM_SINGLE: u64 = 1;
const STREAM_RANDOMIZED: u64 = 2;
const STREAM_SWEEP: u64 = 3;
const STREAM_BEST_OF_K: u64 = 4;
const STREAMS_PER_EPISODE: u64 = 8;

fn episode_stream(episode_id: u64, slot: u64) -> u64 {
    episode_id * STREAMS_PER_EPISODE + slot
}

/// Paired per-episode distances and differences under the three models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub episode_id: u64,
    /// End-point distance under the two-step model.
    pub d_star: f64,
    /// End-point distance under the single-step benchmark.
    pub d_s: f64,
    /// End-point distance under the randomized benchmark.
    pub d_r: f64,
    /// d_star - d_s.
    pub delta_ss: f64,
    /// d_star - d_r.
    pub delta_sr_star: f64,
    /// d_s - d_r.
    pub delta_sr: f64,
    pub violated_star: bool,
    pub violated_s: bool,
    pub violated_r: bool,
}

/// Speed-cap violation totals per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub two_step: usize,
    pub single_step: usize,
    pub randomized: usize,
}

/// Histogram of realized quality scores for one query-score setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub s1: f64,
    pub s2: f64,
    /// Mass per equal-width bin on [0,1]; sums to the test-set size.
    pub bins: Vec<usize>,
    pub mean_realized: f64,
}

/// Identifying metadata of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_digest: String,
    pub dataset_digest: String,
    pub test_size: usize,
}

/// Full evaluation output: per-episode records, their sample means,
/// violation totals, optional sensitivity histograms, and run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_episode: Vec<EpisodeEval>,
    pub mean_delta_ss: f64,
    pub mean_delta_sr_star: f64,
    pub mean_delta_sr: f64,
    pub violations: ViolationCounts,
    pub sensitivity: Vec<SensitivityRow>,
    pub meta: ReportMeta,
}

/// Number of outcomes that violated the speed cap.
pub fn count_violations(outcomes: &[RolloutOutcome]) -> usize {
    outcomes.iter().filter(|o| o.violated).count()
}

/// Roll out all three models over the test set, paired by episode and by
/// derived random source, and aggregate distances, per-episode deltas,
/// and violation totals.
pub fn evaluate(
    two_step: &dyn DecisionModel,
    single_step: &dyn DecisionModel,
    randomized: &dyn DecisionModel,
    cfg: &GameConfig,
    test: &Dataset,
    seed: u64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Invalid("evaluate: empty test set".into()));
    }
    let per_episode: Vec<EpisodeEval> = test
        .rows
        .par_iter()
        .map(|row| {
            let id = row.episode_id;
            let star = two_step.rollout(
                cfg,
                row.r1,
                &mut derived_rng(seed, episode_stream(id, STREAM_TWO_STEP)),
            );
            let s = single_step.rollout(
                cfg,
                row.r1,
                &mut derived_rng(seed, episode_stream(id, STREAM_SINGLE)),
            );
            let r = randomized.rollout(
                cfg,
                row.r1,
                &mut derived_rng(seed, episode_stream(id, STREAM_RANDOMIZED)),
            );
            EpisodeEval {
                episode_id: id,
                d_star: star.d_rb,
                d_s: s.d_rb,
                d_r: r.d_rb,
                delta_ss: star.d_rb - s.d_rb,
                delta_sr_star: star.d_rb - r.d_rb,
                delta_sr: s.d_rb - r.d_rb,
                violated_star: star.violated,
                violated_s: s.violated,
                violated_r: r.violated,
            }
        })
        .collect();

    let n = per_episode.len() as f64;
    let mean = |f: fn(&EpisodeEval) -> f64| per_episode.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        mean_delta_ss: mean(|e| e.delta_ss),
        mean_delta_sr_star: mean(|e| e.delta_sr_star),
        mean_delta_sr: mean(|e| e.delta_sr),
        violations: ViolationCounts {
            two_step: per_episode.iter().filter(|e| e.violated_star).count(),
            single_step: per_episode.iter().filter(|e| e.violated_s).count(),
            randomized: per_episode.iter().filter(|e| e.violated_r).count(),
        },
        sensitivity: Vec::new(),
        meta: ReportMeta {
            seed,
            config_digest: cfg.digest(),
            dataset_digest: test.digest(),
            test_size: per_episode.len(),
        },
        per_episode,
    })
}

/// Query-score sensitivity: for each (s1, s2) setting, roll the two-step
/// model over the test set with those scores, map every end-point
/// distance through the realized quality score, and bin into
/// [`SENSITIVITY_BINS`] equal-width bins on [0,1].
///
/// Every setting reuses the same per-episode random stream, so a model
/// that ignores its score inputs produces identical histograms across
/// settings.
pub fn sensitivity_sweep(
    m: &TwoStepModel,
    cfg: &GameConfig,
    test: &Dataset,
    settings: &[(f64, f64)],
    train_distance_stats: MinMax,
    seed: u64,
) -> Result<Vec<SensitivityRow>> {
    if settings.is_empty() {
        return Err(Error::Invalid("sensitivity_sweep: no settings".into()));
    }
    if test.is_empty() {
        return Err(Error::Invalid("sensitivity_sweep: empty test set".into()));
    }
    settings
        .iter()
        .map(|&(s1, s2)| {
            let model = m.with_query_scores(s1, s2);
            let realized: Vec<f64> = test
                .rows
                .par_iter()
                .map(|row| {
                    let mut rng =
                        derived_rng(seed, episode_stream(row.episode_id, STREAM_SWEEP));
                    let out = model.rollout(cfg, row.r1, &mut rng);
                    realized_score(train_distance_stats, out.d_rb)
                })
                .collect();
            let mut bins = vec![0usize; SENSITIVITY_BINS];
            for &r in &realized {
                let idx = ((r * SENSITIVITY_BINS as f64) as usize).min(SENSITIVITY_BINS - 1);
                bins[idx] += 1;
            }
            Ok(SensitivityRow {
                s1,
                s2,
                bins,
                mean_realized: realized.iter().sum::<f64>() / realized.len() as f64,
            })
        })
        .collect()
}

/// Five-number summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of a non-empty sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl BoxSummary {
    pub fn from_values(values: &[f64]) -> BoxSummary {
        assert!(!values.is_empty());
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite summaries"));
        BoxSummary {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        }
    }
}

/// Configuration of one full pipeline: game, dataset size, split
/// fraction, training knobs, sweep settings, and the best-of-K width.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub game: GameConfig,
    pub n_episodes: usize,
    pub train_frac: f64,
    pub fit: FitSettings,
    pub sweep_settings: Vec<(f64, f64)>,
    pub best_of_k: usize,
}

impl PipelineConfig {
    /// Desk-scale defaults: 3750 episodes split 3000/750, reference
    /// training knobs, the reference sweep settings, K = 30.
    pub fn desk_scale(game: GameConfig) -> PipelineConfig {
        PipelineConfig {
            game,
            n_episodes: 3750,
            train_frac: 0.8,
            fit: FitSettings::default(),
            sweep_settings: DEFAULT_SWEEP_SETTINGS.to_vec(),
            best_of_k: 30,
        }
    }
}

/// Summary of one pipeline run: paired mean deltas, violation totals,
/// mean realized score per sweep setting, and the best-of-K comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub run_id: usize,
    pub mean_delta_ss: f64,
    pub mean_delta_sr_star: f64,
    pub mean_delta_sr: f64,
    pub violations_two_step: usize,
    pub violations_single: usize,
    pub violations_rand: usize,
    pub test_size: usize,
    /// Mean realized score per sweep setting, in settings order.
    pub sweep_mean_realized: Vec<f64>,
    /// Mean test distance when keeping the best of K rollouts.
    pub bok_mean_best: f64,
    /// Mean test distance of a single rollout (K = 1 baseline).
    pub bok_mean_single: f64,
}

/// Outcome of a multi-seed replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultirunOutcome {
    pub runs: Vec<RunStats>,
    pub summary_delta_ss: BoxSummary,
    pub summary_delta_sr_star: BoxSummary,
    pub summary_delta_sr: BoxSummary,
}

/// One split -> train -> evaluate pipeline over an already generated
/// dataset, with every seed derived from (base_seed, run_id).
pub fn run_pipeline_once(
    ds: &Dataset,
    pcfg: &PipelineConfig,
    run_id: usize,
    base_seed: u64,
) -> Result<RunStats> {
    let cfg = &pcfg.game;
    let stride = run_id as u64 * 16;
    let split_seed = derive_seed(base_seed, stride + 1);
    let (train, test) = ds.split(pcfg.train_frac, split_seed)?;

    let two = train_two_step(&train, cfg, &pcfg.fit, derive_seed(base_seed, stride + 2))?;
    let single = train_single_step(&train, cfg, &pcfg.fit, derive_seed(base_seed, stride + 3))?;
    let randomized = fit_randomized(&train)?;

    let eval_seed = derive_seed(base_seed, stride + 4);
    let report = evaluate(&two.model, &single.model, &randomized, cfg, &test, eval_seed)?;
    let sweep = sensitivity_sweep(
        &two.model,
        cfg,
        &test,
        &pcfg.sweep_settings,
        two.model.drb_stats,
        eval_seed,
    )?;

    let bok_distances: Vec<f64> = test
        .rows
        .par_iter()
        .map(|row| {
            let mut rng =
                derived_rng(eval_seed, episode_stream(row.episode_id, STREAM_BEST_OF_K));
            best_of_k(&two.model, cfg, row.r1, pcfg.best_of_k, &mut rng).d_rb
        })
        .collect();

    Ok(RunStats {
        run_id,
        mean_delta_ss: report.mean_delta_ss,
        mean_delta_sr_star: report.mean_delta_sr_star,
        mean_delta_sr: report.mean_delta_sr,
        violations_two_step: report.violations.two_step,
        violations_single: report.violations.single_step,
        violations_rand: report.violations.randomized,
        test_size: report.meta.test_size,
        sweep_mean_realized: sweep.iter().map(|s| s.mean_realized).collect(),
        bok_mean_best: bok_distances.iter().sum::<f64>() / bok_distances.len() as f64,
        bok_mean_single: report.per_episode.iter().map(|e| e.d_star).sum::<f64>()
            / report.meta.test_size as f64,
    })
}

/// Generate one dataset, then repeat split -> train -> evaluate
/// `n_runs` times with derived seeds, summarizing the per-run mean
/// deltas as box-plot statistics. Runs execute in parallel; output is
/// deterministic for a fixed base seed.
pub fn multirun(pcfg: &PipelineConfig, n_runs: usize, base_seed: u64) -> Result<MultirunOutcome> {
    if n_runs == 0 {
        return Err(Error::Invalid("multirun: n_runs must be >= 1".into()));
    }
    let ds = generate_dataset(&pcfg.game, pcfg.n_episodes, derive_seed(base_seed, 0))?;
    let runs: Vec<RunStats> = (0..n_runs)
        .into_par_iter()
        .map(|run_id| run_pipeline_once(&ds, pcfg, run_id, base_seed))
        .collect::<Result<_>>()?;

    let column = |f: fn(&RunStats) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
    Ok(MultirunOutcome {
        summary_delta_ss: BoxSummary::from_values(&column(|r| r.mean_delta_ss)),
        summary_delta_sr_star: BoxSummary::from_values(&column(|r| r.mean_delta_sr_star)),
        summary_delta_sr: BoxSummary::from_values(&column(|r| r.mean_delta_sr)),
        runs,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("bad report json: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        Self::from_json(&read_file(path)?)
    }

    /// The per-episode distance table.
    pub fn deltas_csv(&self) -> String {
        let mut out =
            String::from("episode_id,d_star,d_s,d_r,delta_ss,delta_sr_star,delta_sr\n");
        for e in &self.per_episode {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.episode_id,
                fmt_f64(e.d_star),
                fmt_f64(e.d_s),
                fmt_f64(e.d_r),
                fmt_f64(e.delta_ss),
                fmt_f64(e.delta_sr_star),
                fmt_f64(e.delta_sr),
            ));
        }
        out
    }
}

/// Sensitivity histograms as a flat CSV.
pub fn sensitivity_csv(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("setting_s1,setting_s2,bin_lo,bin_hi,count\n");
    for row in rows {
        for (i, &count) in row.bins.iter().enumerate() {
            let lo = i as f64 / SENSITIVITY_BINS as f64;
            let hi = (i + 1) as f64 / SENSITIVITY_BINS as f64;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(row.s1),
                fmt_f64(row.s2),
                fmt_f64(lo),
                fmt_f64(hi),
                count
            ));
        }
    }
    out
}

/// Per-run summary table of a multirun.
pub fn multirun_csv(outcome: &MultirunOutcome) -> String {
    let mut out = String::from(
        "run_id,mean_delta_ss,mean_delta_sr_star,mean_delta_sr,violations_two_step,violations_single,violations_rand\n",
    );
    for r in &outcome.runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.run_id,
            fmt_f64(r.mean_delta_ss),
            fmt_f64(r.mean_delta_sr_star),
            fmt_f64(r.mean_delta_sr),
            r.violations_two_step,
            r.violations_single,
            r.violations_rand,
        ));
    }
    out
}
