//! Decision models for the pursuer.
//!
//! The sequential two-step model queries one trained generator per stage,
//! recovering the evader's stage-2 action from its known evasion rule in
//! between. Two benchmarks frame it: a single-step model that commits to
//! one action for the whole game, and a randomized model that draws
//! stage actions from Gaussians fitted on training data. Best-of-K
//! ranking turns any stochastic model into an approximately optimal one
//! by keeping the outcome-best of K independent rollouts.
//!
//! Models are immutable after construction; rollouts over distinct
//! episodes parallelize with per-episode random sources.

use crate::cgan::{
    make_g1_pairs, make_g2_pairs, sample_generator, train_conditional_gan, GanSpec, Generator,
    TrainConfig, TrainPair,
};
use crate::dataset::{eta, fit_minmax, Dataset, MinMax};
use crate::error::{Error, Result};
use crate::game::{self, GameConfig, Point2, PolarAction};
use crate::manifest::{ModelMeta, RunManifest};
use crate::rng::derive_seed;
use crate::scorer::{build_s1_scores, ScoreTable, QUERY_SCORE};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// One played game under a decision model: both agents' actions, the
/// terminal positions, the end-point distance, and whether the pursuer's
/// speed budget was violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOutcome {
    pub r1: PolarAction,
    pub b1: PolarAction,
    pub r2: PolarAction,
    pub b2: PolarAction,
    pub red_end: Point2,
    pub blue_end: Point2,
    pub d_rb: f64,
    pub violated: bool,
}

/// Anything that can play Blue for one episode given Red's opening
/// action.
pub trait DecisionModel: Sync {
    fn rollout(&self, cfg: &GameConfig, r1: PolarAction, rng: &mut ChaCha8Rng) -> RolloutOutcome;
}

fn action_to_polar(a: &[f64]) -> PolarAction {
    PolarAction::from_raw(a[0], a[1])
}

/// Shared tail of every rollout: the evader responds to Blue's mid-game
/// position with its evasion rule, both agents play out stage 2, and the
/// outcome is scored. Returns (r2, red_mid, blue_mid) context via the
/// closure argument so callers choose Blue's stage-2 action.
fn play_episode<F>(
    cfg: &GameConfig,
    r1: PolarAction,
    b1: PolarAction,
    choose_b2: F,
) -> RolloutOutcome
where
    F: FnOnce(PolarAction, Point2) -> PolarAction,
{
    let half = cfg.half();
    let red_mid = game::position_after(cfg.red_start, r1, half);
    let blue_mid = game::position_after(cfg.blue_start, b1, half);
    let (r2, _dest) = game::red_stage2(cfg, r1, blue_mid);
    let b2 = choose_b2(r2, blue_mid);
    let red_end = game::position_after(red_mid, r2, half);
    let blue_end = game::position_after(blue_mid, b2, half);
    RolloutOutcome {
        r1,
        b1,
        r2,
        b2,
        red_end,
        blue_end,
        d_rb: game::endpoint_distance(red_end, blue_end),
        violated: b1.speed + b2.speed > cfg.v_cap,
    }
}

/// The sequential two-step decision model: generator per stage, trained
/// normalization bounds, and the query scores used at rollout time.
#[derive(Debug, Clone)]
pub struct TwoStepModel {
    pub g1: Generator,
    pub g2: Generator,
    /// Training-split end-point distance bounds (realized-score basis).
    pub drb_stats: MinMax,
    pub query_s1: f64,
    pub query_s2: f64,
}

impl TwoStepModel {
    pub fn new(
        g1: Generator,
        g2: Generator,
        drb_stats: MinMax,
        query_s1: f64,
        query_s2: f64,
    ) -> Result<TwoStepModel> {
        if g1.spec.condition_dim != 2 {
            return Err(Error::Invalid(format!(
                "stage-1 generator must condition on 2 features, has {}",
                g1.spec.condition_dim
            )));
        }
        if g2.spec.condition_dim != 5 {
            return Err(Error::Invalid(format!(
                "stage-2 generator must condition on 5 features, has {}",
                g2.spec.condition_dim
            )));
        }
        Ok(TwoStepModel {
            g1,
            g2,
            drb_stats,
            query_s1,
            query_s2,
        })
    }

    /// Same model with different query scores (used by the sensitivity
    /// sweep).
    pub fn with_query_scores(&self, s1: f64, s2: f64) -> TwoStepModel {
        TwoStepModel {
            query_s1: s1,
            query_s2: s2,
            ..self.clone()
        }
    }
}

/// Roll out the two-step model: sample b1 from the stage-1 generator,
/// let the evader respond, then sample b2 conditioned on both observed
/// evader actions and the remaining speed budget. Sampled speeds below
/// zero clamp to zero; no hard cap is applied, violations are recorded.
pub fn rollout_two_step(
    m: &TwoStepModel,
    cfg: &GameConfig,
    r1: PolarAction,
    rng: &mut ChaCha8Rng,
) -> RolloutOutcome {
    let b1 = action_to_polar(&sample_generator(
        &m.g1,
        &[r1.speed, r1.heading],
        m.query_s1,
        rng,
    ));
    play_episode(cfg, r1, b1, |r2, _blue_mid| {
        // Coupling: the stage-2 condition carries the budget left by the
        // b1 actually played.
        let v_cap_rem = cfg.v_cap - b1.speed;
        let condition = [r1.speed, r1.heading, r2.speed, r2.heading, v_cap_rem];
        debug_assert_eq!(condition[4], cfg.v_cap - b1.speed);
        action_to_polar(&sample_generator(&m.g2, &condition, m.query_s2, rng))
    })
}

impl DecisionModel for TwoStepModel {
    fn rollout(&self, cfg: &GameConfig, r1: PolarAction, rng: &mut ChaCha8Rng) -> RolloutOutcome {
        rollout_two_step(self, cfg, r1, rng)
    }
}

/// The single-step benchmark: one generator, one action for the whole
/// game.
#[derive(Debug, Clone)]
pub struct SingleStepModel {
    pub g: Generator,
    pub query_score: f64,
}

impl SingleStepModel {
    pub fn new(g: Generator, query_score: f64) -> Result<SingleStepModel> {
        if g.spec.condition_dim != 2 {
            return Err(Error::Invalid(format!(
                "single-step generator must condition on 2 features, has {}",
                g.spec.condition_dim
            )));
        }
        Ok(SingleStepModel { g, query_score })
    }
}

/// Roll out the single-step benchmark: one sampled action (V, Theta)
/// drives stage 1; the evader still responds mid-game; stage 2 keeps the
/// heading with speed min(V, v_cap - V) (clamped at zero), so committing
/// to a fast stage 1 drains the stage-2 budget.
pub fn rollout_single_step(
    m: &SingleStepModel,
    cfg: &GameConfig,
    r1: PolarAction,
    rng: &mut ChaCha8Rng,
) -> RolloutOutcome {
    let b1 = action_to_polar(&sample_generator(
        &m.g,
        &[r1.speed, r1.heading],
        m.query_score,
        rng,
    ));
    let outcome = play_episode(cfg, r1, b1, |_r2, _blue_mid| {
        PolarAction::new(b1.speed.min((cfg.v_cap - b1.speed).max(0.0)), b1.heading)
    });
    RolloutOutcome {
        violated: 2.0 * b1.speed > cfg.v_cap,
        ..outcome
    }
}

impl DecisionModel for SingleStepModel {
    fn rollout(&self, cfg: &GameConfig, r1: PolarAction, rng: &mut ChaCha8Rng) -> RolloutOutcome {
        rollout_single_step(self, cfg, r1, rng)
    }
}

/// A 2-D Gaussian over (speed, heading) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    /// Symmetric positive semi-definite covariance.
    pub cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    /// Draw via the Cholesky factor; near-singular covariances degrade
    /// gracefully to their achievable span.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let l11 = self.cov[0][0].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov[1][0] / l11 } else { 0.0 };
        let l22 = (self.cov[1][1] - l21 * l21).max(0.0).sqrt();
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        [
            self.mean[0] + l11 * z1,
            self.mean[1] + l21 * z1 + l22 * z2,
        ]
    }
}

/// The randomized benchmark: stage-wise Gaussians fitted on training
/// actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedModel {
    pub stage1: Gaussian2,
    pub stage2: Gaussian2,
}

/// Fit per-stage sample mean and covariance (n-1 denominator) of the
/// pursuer's (speed, heading) pairs.
pub fn fit_randomized(train: &Dataset) -> Result<RandomizedModel> {
    if train.len() < 2 {
        return Err(Error::Invalid(format!(
            "fit_randomized: need at least 2 rows, got {}",
            train.len()
        )));
    }
    let fit = |samples: Vec<[f64; 2]>| -> Gaussian2 {
        let n = samples.len() as f64;
        let mut mean = [0.0; 2];
        for s in &samples {
            mean[0] += s[0] / n;
            mean[1] += s[1] / n;
        }
        let mut cov = [[0.0; 2]; 2];
        for s in &samples {
            let d = [s[0] - mean[0], s[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
        Gaussian2 { mean, cov }
    };
    Ok(RandomizedModel {
        stage1: fit(train.rows.iter().map(|r| [r.b1.speed, r.b1.heading]).collect()),
        stage2: fit(train.rows.iter().map(|r| [r.b2.speed, r.b2.heading]).collect()),
    })
}

/// Roll out the randomized benchmark: both stage actions drawn
/// independently from the fitted Gaussians (speeds clamped at zero); the
/// evader responds to the realized mid-game position as usual.
pub fn rollout_randomized(
    m: &RandomizedModel,
    cfg: &GameConfig,
    r1: PolarAction,
    rng: &mut ChaCha8Rng,
) -> RolloutOutcome {
    let a1 = m.stage1.sample(rng);
    let b1 = PolarAction::from_raw(a1[0], a1[1]);
    play_episode(cfg, r1, b1, |_r2, _blue_mid| {
        let a2 = m.stage2.sample(rng);
        PolarAction::from_raw(a2[0], a2[1])
    })
}

impl DecisionModel for RandomizedModel {
    fn rollout(&self, cfg: &GameConfig, r1: PolarAction, rng: &mut ChaCha8Rng) -> RolloutOutcome {
        rollout_randomized(self, cfg, r1, rng)
    }
}

/// Query the model `k` times and keep the best response: cap-violating
/// candidates are discarded (unless every candidate violates) and the
/// smallest end-point distance wins, ties broken by the earliest
/// candidate.
pub fn best_of_k(
    m: &impl DecisionModel,
    cfg: &GameConfig,
    r1: PolarAction,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> RolloutOutcome {
    assert!(k >= 1, "best_of_k needs k >= 1");
    let candidates: Vec<RolloutOutcome> = (0..k).map(|_| m.rollout(cfg, r1, rng)).collect();
    let pick = |pool: &[&RolloutOutcome]| -> RolloutOutcome {
        let mut best = pool[0];
        for c in &pool[1..] {
            if c.d_rb < best.d_rb {
                best = c;
            }
        }
        *best
    };
    let feasible: Vec<&RolloutOutcome> = candidates.iter().filter(|c| !c.violated).collect();
    if feasible.is_empty() {
        pick(&candidates.iter().collect::<Vec<_>>())
    } else {
        pick(&feasible)
    }
}

/// End-point distance when the pursuer holds the episode's recorded
/// stage-1 action for the whole game under the budget drop rule. The
/// evader's recorded path is unchanged because stage 1 is identical.
pub fn single_step_replay_distance(cfg: &GameConfig, row: &game::EpisodeRecord) -> f64 {
    let half = cfg.half();
    let blue_mid = game::position_after(cfg.blue_start, row.b1, half);
    let b2 = PolarAction::new(
        row.b1.speed.min((cfg.v_cap - row.b1.speed).max(0.0)),
        row.b1.heading,
    );
    let blue_end = game::position_after(blue_mid, b2, half);
    game::endpoint_distance(row.red_end, blue_end)
}

/// Training pairs for the single-step benchmark: condition = the
/// evader's opening action, action = the scripted stage-1 action, score
/// = 1 - eta of the distance that holding that action for both stages
/// would have produced. Returns the pairs and the fitted distance
/// bounds.
pub fn make_single_step_pairs(
    train: &Dataset,
    cfg: &GameConfig,
) -> Result<(Vec<TrainPair>, MinMax)> {
    let distances: Vec<f64> = train
        .rows
        .iter()
        .map(|r| single_step_replay_distance(cfg, r))
        .collect();
    let stats = fit_minmax(&distances)?;
    let pairs = train
        .rows
        .iter()
        .zip(&distances)
        .map(|(r, &d)| TrainPair {
            condition: vec![r.r1.speed, r.r1.heading],
            score: 1.0 - eta(stats, d),
            action: vec![r.b1.speed, r.b1.heading],
        })
        .collect();
    Ok((pairs, stats))
}

/// Knobs for one model-training pass (seeds are supplied separately and
/// derived internally).
#[derive(Debug, Clone)]
pub struct FitSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub disc_steps: usize,
    /// Monte-Carlo queries per episode in the stage-1 score build.
    pub n_mc: usize,
}

impl Default for FitSettings {
    fn default() -> FitSettings {
        FitSettings {
            epochs: 300,
            batch_size: 128,
            lr_gen: 2e-4,
            lr_disc: 2e-4,
            disc_steps: 1,
            n_mc: 30,
        }
    }
}

impl FitSettings {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_gen: self.lr_gen,
            lr_disc: self.lr_disc,
            seed,
            disc_steps: self.disc_steps,
        }
    }
}

/// Everything produced while training a two-step model.
pub struct TwoStepTraining {
    pub model: TwoStepModel,
    pub score_table: ScoreTable,
    /// The training split with both score columns attached.
    pub scored_train: Dataset,
}

/// Train the two-step model on a training split.
///
/// The stage-2 generator must exist before stage-1 scores can: s2 scores
/// are attached from end-point distances, G2 trains on them, the
/// Monte-Carlo score build queries G2 to produce s1, and only then does
/// G1 train. Deterministic for a fixed seed.
pub fn train_two_step(
    train: &Dataset,
    cfg: &GameConfig,
    settings: &FitSettings,
    seed: u64,
) -> Result<TwoStepTraining> {
    let drb_stats = fit_minmax(&train.d_rb_values())?;
    let scored = train.clone().attach_s2(drb_stats);

    let g2_pairs = make_g2_pairs(&scored)?;
    let g2 = train_conditional_gan(
        &g2_pairs,
        &GanSpec::new(5),
        &settings.train_config(derive_seed(seed, 1)),
    )?;

    let score_table = build_s1_scores(&g2, &scored, cfg, settings.n_mc, derive_seed(seed, 2))?;
    let scored = scored.attach_s1(score_table.s1_values())?;

    let g1_pairs = make_g1_pairs(&scored)?;
    let g1 = train_conditional_gan(
        &g1_pairs,
        &GanSpec::new(2),
        &settings.train_config(derive_seed(seed, 3)),
    )?;

    Ok(TwoStepTraining {
        model: TwoStepModel::new(g1, g2, drb_stats, QUERY_SCORE, QUERY_SCORE)?,
        score_table,
        scored_train: scored,
    })
}

/// Everything produced while training the single-step benchmark.
pub struct SingleStepTraining {
    pub model: SingleStepModel,
    /// Training-split end-point distance bounds (shared realized-score
    /// basis with the two-step model).
    pub drb_stats: MinMax,
    /// Bounds of the held-action replay distances behind the training
    /// scores.
    pub replay_stats: MinMax,
}

/// Train the single-step benchmark on a training split.
pub fn train_single_step(
    train: &Dataset,
    cfg: &GameConfig,
    settings: &FitSettings,
    seed: u64,
) -> Result<SingleStepTraining> {
    let drb_stats = fit_minmax(&train.d_rb_values())?;
    let (pairs, replay_stats) = make_single_step_pairs(train, cfg)?;
    let g = train_conditional_gan(
        &pairs,
        &GanSpec::new(2),
        &settings.train_config(derive_seed(seed, 4)),
    )?;
    Ok(SingleStepTraining {
        model: SingleStepModel::new(g, QUERY_SCORE)?,
        drb_stats,
        replay_stats,
    })
}

impl TwoStepModel {
    /// Write the model bundle: `g1/` and `g2/` generator bundles plus the
    /// manifest.
    pub fn save_bundle(&self, dir: &Path, manifest: &RunManifest) -> Result<()> {
        self.g1.save_bundle(&dir.join("g1"))?;
        self.g2.save_bundle(&dir.join("g2"))?;
        manifest.save(dir)
    }

    pub fn load_bundle(dir: &Path) -> Result<(TwoStepModel, RunManifest)> {
        let manifest = RunManifest::load(dir)?;
        let meta = manifest
            .model
            .as_ref()
            .ok_or_else(|| Error::Invalid("bundle manifest lacks a model section".into()))?;
        if meta.kind != "two-step" {
            return Err(Error::Invalid(format!(
                "expected a two-step bundle, found {:?}",
                meta.kind
            )));
        }
        let query = |k: &str| -> Result<f64> {
            meta.query_scores
                .get(k)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("manifest missing query score {k:?}")))
        };
        let model = TwoStepModel::new(
            Generator::load_bundle(&dir.join("g1"))?,
            Generator::load_bundle(&dir.join("g2"))?,
            MinMax {
                min: meta.drb_min,
                max: meta.drb_max,
            },
            query("s1")?,
            query("s2")?,
        )?;
        Ok((model, manifest))
    }
}

impl SingleStepModel {
    /// Write the model bundle: a `single/` generator bundle plus the
    /// manifest.
    pub fn save_bundle(&self, dir: &Path, manifest: &RunManifest) -> Result<()> {
        self.g.save_bundle(&dir.join("single"))?;
        manifest.save(dir)
    }

    pub fn load_bundle(dir: &Path) -> Result<(SingleStepModel, RunManifest)> {
        let manifest = RunManifest::load(dir)?;
        let meta = manifest
            .model
            .as_ref()
            .ok_or_else(|| Error::Invalid("bundle manifest lacks a model section".into()))?;
        if meta.kind != "single-step" {
            return Err(Error::Invalid(format!(
                "expected a single-step bundle, found {:?}",
                meta.kind
            )));
        }
        let score = meta
            .query_scores
            .get("s")
            .copied()
            .ok_or_else(|| Error::Invalid("manifest missing query score \"s\"".into()))?;
        let model = SingleStepModel::new(Generator::load_bundle(&dir.join("single"))?, score)?;
        Ok((model, manifest))
    }
}

/// Manifest model section for a trained two-step bundle.
pub fn two_step_meta(
    training: &TwoStepTraining,
    dataset_digest: String,
    train_frac: f64,
    split_seed: u64,
) -> ModelMeta {
    let drb = training.model.drb_stats;
    let mut query_scores = std::collections::BTreeMap::new();
    query_scores.insert("s1".to_string(), training.model.query_s1);
    query_scores.insert("s2".to_string(), training.model.query_s2);
    ModelMeta {
        kind: "two-step".into(),
        query_scores,
        dataset_digest,
        train_frac,
        split_seed,
        drb_min: drb.min,
        drb_max: drb.max,
        stats_digest: ModelMeta::stats_digest_of(drb.min, drb.max),
    }
}

/// Manifest model section for a trained single-step bundle.
pub fn single_step_meta(
    training: &SingleStepTraining,
    dataset_digest: String,
    train_frac: f64,
    split_seed: u64,
) -> ModelMeta {
    let drb = training.drb_stats;
    let mut query_scores = std::collections::BTreeMap::new();
    query_scores.insert("s".to_string(), training.model.query_score);
    ModelMeta {
        kind: "single-step".into(),
        query_scores,
        dataset_digest,
        train_frac,
        split_seed,
        drb_min: drb.min,
        drb_max: drb.max,
        stats_digest: ModelMeta::stats_digest_of(drb.min, drb.max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;
    use crate::rng::seeded_rng;
    use std::cell::Cell;

    fn sigma_zero_config() -> GameConfig {
        let mut cfg = GameConfig::default();
        cfg.v_std_red = 0.0;
        cfg.theta_std_red = 0.0;
        cfg
    }

    fn mean_r1(cfg: &GameConfig) -> PolarAction {
        PolarAction::new(cfg.v_mean_red, cfg.theta_mean_red)
    }

    /// Constant-output two-step model built from the scripted actions of
    /// the zero-variance scenario.
    fn scripted_stub_model(cfg: &GameConfig) -> TwoStepModel {
        let r1 = mean_r1(cfg);
        let b1 = game::scripted_blue_stage1(cfg, r1);
        let blue_mid = game::position_after(cfg.blue_start, b1, cfg.half());
        let (_, dest) = game::red_stage2(cfg, r1, blue_mid);
        let b2 = game::scripted_blue_stage2(cfg, blue_mid, b1.speed, dest);
        TwoStepModel::new(
            Generator::constant(&GanSpec::new(2), &[b1.speed, b1.heading]),
            Generator::constant(&GanSpec::new(5), &[b2.speed, b2.heading]),
            MinMax { min: 0.0, max: 1.0 },
            0.98,
            0.98,
        )
        .unwrap()
    }

    #[test]
    fn two_step_scripted_stub_intercepts() {
        let cfg = sigma_zero_config();
        let m = scripted_stub_model(&cfg);
        let out = rollout_two_step(&m, &cfg, mean_r1(&cfg), &mut seeded_rng(1));
        assert!(out.d_rb < 1e-6, "d_rb = {}", out.d_rb);
        assert!(!out.violated);
    }

    #[test]
    fn two_step_violation_flag_tracks_cap() {
        let cfg = GameConfig::default();
        let make = |v1: f64, v2: f64| {
            TwoStepModel::new(
                Generator::constant(&GanSpec::new(2), &[v1, 0.5]),
                Generator::constant(&GanSpec::new(5), &[v2, 0.5]),
                MinMax { min: 0.0, max: 1.0 },
                0.98,
                0.98,
            )
            .unwrap()
        };
        let r1 = mean_r1(&cfg);
        let out = rollout_two_step(&make(6.0, 7.0), &cfg, r1, &mut seeded_rng(2));
        assert!(out.violated, "6 + 7 > 12 must violate");
        let out = rollout_two_step(&make(6.0, 5.0), &cfg, r1, &mut seeded_rng(2));
        assert!(!out.violated, "6 + 5 <= 12 must not violate");
    }

    #[test]
    fn two_step_rollout_is_seed_deterministic() {
        let cfg = GameConfig::default();
        let m = scripted_stub_model(&cfg);
        let r1 = PolarAction::new(5.3, 1.0);
        let a = rollout_two_step(&m, &cfg, r1, &mut seeded_rng(3));
        let b = rollout_two_step(&m, &cfg, r1, &mut seeded_rng(3));
        assert_eq!(a, b);
    }

    #[test]
    fn stage2_condition_carries_played_budget() {
        // Echo generator: routes its v_cap_rem input straight to the
        // output speed through the rectifier stack, so the played b2
        // exposes exactly what the stage-2 condition received.
        let spec = GanSpec::new(5);
        let mlp = spec.generator_mlp_spec();
        let mut params = crate::neural::MlpParams {
            weights: mlp
                .layer_sizes
                .windows(2)
                .map(|w| vec![0.0; w[0] * w[1]])
                .collect(),
            biases: mlp.layer_sizes[1..].iter().map(|&w| vec![0.0; w]).collect(),
            spec: mlp,
        };
        // input index 4 = v_cap_rem -> hidden0 unit0 -> hidden1 unit0 -> output0
        params.weights[0][0 * 8 + 4] = 1.0;
        params.weights[1][0] = 1.0;
        params.weights[2][0] = 1.0;
        let id = |d: usize| crate::cgan::Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        };
        let echo_g2 = Generator {
            params,
            spec: spec.clone(),
            cond_stats: id(5),
            action_stats: id(2),
        };
        let m = TwoStepModel::new(
            Generator::constant(&GanSpec::new(2), &[3.0, 1.9]),
            echo_g2,
            MinMax { min: 0.0, max: 1.0 },
            0.98,
            0.98,
        )
        .unwrap();
        let cfg = GameConfig::default();
        let out = rollout_two_step(&m, &cfg, mean_r1(&cfg), &mut seeded_rng(4));
        assert_eq!(out.b1.speed, 3.0);
        assert!((out.b2.speed - (cfg.v_cap - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn single_step_speed_drop_rule() {
        let cfg = GameConfig::default();
        let r1 = mean_r1(&cfg);
        let make = |v: f64| {
            SingleStepModel::new(Generator::constant(&GanSpec::new(2), &[v, 1.9]), 0.98).unwrap()
        };
        let out = rollout_single_step(&make(5.0), &cfg, r1, &mut seeded_rng(5));
        assert_eq!(out.b2.speed, 5.0);
        assert!(!out.violated);
        let out = rollout_single_step(&make(7.0), &cfg, r1, &mut seeded_rng(5));
        assert!((out.b2.speed - 5.0).abs() < 1e-12, "12 - 7 = 5");
        assert!(out.violated);
        assert_eq!(out.b2.heading, out.b1.heading);
    }

    #[test]
    fn single_step_scripted_stub_lands_on_projection() {
        // Holding the scripted stage-1 action, Blue ends at the point it
        // initially projected for Red; the distance is to Red's true end.
        let cfg = sigma_zero_config();
        let r1 = mean_r1(&cfg);
        let b1 = game::scripted_blue_stage1(&cfg, r1);
        let m = SingleStepModel::new(
            Generator::constant(&GanSpec::new(2), &[b1.speed, b1.heading]),
            0.98,
        )
        .unwrap();
        let out = rollout_single_step(&m, &cfg, r1, &mut seeded_rng(6));

        // Closed-form oracle for the expected distance.
        let proj = game::project_destination(&cfg, r1);
        let blue_mid = game::position_after(cfg.blue_start, b1, cfg.half());
        let (_, red_dest) = game::red_stage2(&cfg, r1, blue_mid);
        let want = proj.distance(red_dest);

        assert!(out.blue_end.distance(proj) < 1e-9, "Blue must end at the projection");
        assert!((out.d_rb - want).abs() < 1e-9);
        assert!(out.d_rb > 0.0);
    }

    #[test]
    fn fit_randomized_matches_hand_computation() {
        let cfg = GameConfig::default();
        let mut ds = generate_dataset(&cfg, 2, 1).unwrap();
        ds.rows[0].b1 = PolarAction::new(2.0, 0.4);
        ds.rows[1].b1 = PolarAction::new(4.0, 0.8);
        ds.rows[0].b2 = PolarAction::new(1.0, 1.0);
        ds.rows[1].b2 = PolarAction::new(1.0, 1.0);
        let m = fit_randomized(&ds).unwrap();
        assert!((m.stage1.mean[0] - 3.0).abs() < 1e-12);
        assert!((m.stage1.mean[1] - 0.6).abs() < 1e-12);
        // sample covariance over two points: var_v = 2, var_th = 0.08,
        // cov = 0.4
        assert!((m.stage1.cov[0][0] - 2.0).abs() < 1e-12);
        assert!((m.stage1.cov[1][1] - 0.08).abs() < 1e-12);
        assert!((m.stage1.cov[0][1] - 0.4).abs() < 1e-12);
        assert_eq!(m.stage1.cov[0][1], m.stage1.cov[1][0]);
        // duplicated rows collapse the covariance
        assert_eq!(m.stage2.cov, [[0.0; 2]; 2]);

        // mean is invariant to row order
        ds.rows.swap(0, 1);
        let m2 = fit_randomized(&ds).unwrap();
        assert_eq!(m.stage1.mean, m2.stage1.mean);

        let one = Dataset {
            rows: vec![ds.rows[0]],
            s2: vec![None],
            s1: vec![None],
            provenance: ds.provenance.clone(),
        };
        assert!(fit_randomized(&one).is_err());
    }

    #[test]
    fn randomized_zero_covariance_plays_the_means() {
        let g = Gaussian2 {
            mean: [4.0, 1.2],
            cov: [[0.0; 2]; 2],
        };
        let m = RandomizedModel { stage1: g, stage2: g };
        let cfg = GameConfig::default();
        let out = rollout_randomized(&m, &cfg, mean_r1(&cfg), &mut seeded_rng(7));
        assert_eq!(out.b1, PolarAction::new(4.0, 1.2));
        assert_eq!(out.b2, PolarAction::new(4.0, 1.2));
        let out2 = rollout_randomized(&m, &cfg, mean_r1(&cfg), &mut seeded_rng(7));
        assert_eq!(out, out2);
    }

    #[test]
    fn randomized_sample_mean_matches_fit() {
        let g1 = Gaussian2 {
            mean: [4.5, 1.9],
            cov: [[0.49, 0.02], [0.02, 0.04]],
        };
        let m = RandomizedModel {
            stage1: g1,
            stage2: g1,
        };
        let mut rng = seeded_rng(8);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let s = m.stage1.sample(&mut rng);
            mean[0] += s[0] / n as f64;
            mean[1] += s[1] / n as f64;
        }
        // three standard errors of the mean
        let se_v = (0.49f64 / n as f64).sqrt();
        let se_t = (0.04f64 / n as f64).sqrt();
        assert!((mean[0] - 4.5).abs() < 3.0 * se_v, "{} vs 4.5", mean[0]);
        assert!((mean[1] - 1.9).abs() < 3.0 * se_t, "{} vs 1.9", mean[1]);
    }

    /// Deterministic queue of outcomes for exercising the ranking logic.
    struct QueueModel {
        outcomes: Vec<RolloutOutcome>,
        next: Cell<usize>,
    }

    impl QueueModel {
        fn outcome(d_rb: f64, violated: bool) -> RolloutOutcome {
            let a = PolarAction::new(1.0, 0.0);
            RolloutOutcome {
                r1: a,
                b1: a,
                r2: a,
                b2: a,
                red_end: Point2::new(0.0, 0.0),
                blue_end: Point2::new(d_rb, 0.0),
                d_rb,
                violated,
            }
        }

        fn new(spec: &[(f64, bool)]) -> QueueModel {
            QueueModel {
                outcomes: spec.iter().map(|&(d, v)| Self::outcome(d, v)).collect(),
                next: Cell::new(0),
            }
        }
    }

    // Cell is fine here: the ranking tests run on one thread.
    unsafe impl Sync for QueueModel {}

    impl DecisionModel for QueueModel {
        fn rollout(&self, _: &GameConfig, _: PolarAction, _: &mut ChaCha8Rng) -> RolloutOutcome {
            let i = self.next.get();
            self.next.set(i + 1);
            self.outcomes[i % self.outcomes.len()]
        }
    }

    #[test]
    fn best_of_k_returns_exact_argmin() {
        let cfg = GameConfig::default();
        let r1 = mean_r1(&cfg);
        let m = QueueModel::new(&[
            (3.0, false),
            (1.5, false),
            (0.0, false),
            (2.0, false),
            (0.0, false),
        ]);
        let out = best_of_k(&m, &cfg, r1, 5, &mut seeded_rng(9));
        // candidate 3 wins; the tie with candidate 5 breaks to the
        // earlier index
        assert_eq!(out, m.outcomes[2]);
    }

    #[test]
    fn best_of_k_discards_violations_unless_all_violate() {
        let cfg = GameConfig::default();
        let r1 = mean_r1(&cfg);
        let m = QueueModel::new(&[(0.5, true), (2.0, false), (4.0, false)]);
        let out = best_of_k(&m, &cfg, r1, 3, &mut seeded_rng(10));
        assert_eq!(out, m.outcomes[1], "the violating 0.5 must be discarded");

        let m = QueueModel::new(&[(5.0, true), (3.0, true)]);
        let out = best_of_k(&m, &cfg, r1, 2, &mut seeded_rng(10));
        assert_eq!(out, m.outcomes[1], "all violate: fall back to the argmin");
    }

    #[test]
    fn best_of_one_is_a_plain_rollout() {
        let cfg = GameConfig::default();
        let m = scripted_stub_model(&cfg);
        let r1 = PolarAction::new(4.9, 1.1);
        let a = best_of_k(&m, &cfg, r1, 1, &mut seeded_rng(11));
        let b = rollout_two_step(&m, &cfg, r1, &mut seeded_rng(11));
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_pairs_have_valid_scores_and_replay() {
        let cfg = GameConfig::default();
        let ds = generate_dataset(&cfg, 50, 14).unwrap();
        let (pairs, stats) = make_single_step_pairs(&ds, &cfg).unwrap();
        assert_eq!(pairs.len(), 50);
        assert!(stats.max >= stats.min);
        for (p, r) in pairs.iter().zip(&ds.rows) {
            assert!((0.0..=1.0).contains(&p.score));
            assert_eq!(p.condition, vec![r.r1.speed, r.r1.heading]);
            assert_eq!(p.action, vec![r.b1.speed, r.b1.heading]);

            // independent replay of the drop rule
            let half = cfg.half();
            let blue_mid = game::position_after(cfg.blue_start, r.b1, half);
            let v2 = r.b1.speed.min((cfg.v_cap - r.b1.speed).max(0.0));
            let blue_end = game::position_after(
                blue_mid,
                PolarAction::new(v2, r.b1.heading),
                half,
            );
            let d = r.red_end.distance(blue_end);
            assert!((p.score - (1.0 - eta(stats, d))).abs() < 1e-12);
        }
    }

    #[test]
    fn rollouts_preserve_game_invariants() {
        let cfg = GameConfig::default();
        let m = scripted_stub_model(&cfg);
        let mut rng = seeded_rng(15);
        for i in 0..200 {
            let r1 = PolarAction::new(
                4.0 + (i as f64) * 0.01,
                1.0 + (i as f64) * 0.001,
            );
            let out = rollout_two_step(&m, &cfg, r1, &mut rng);
            assert!(out.d_rb.is_finite() && out.d_rb >= 0.0);
            // the evader's reply sits on its safety circle
            let (center, radius) = game::safety_circle(&cfg, r1);
            let red_end = out.red_end;
            assert!((red_end.distance(center) - radius).abs() < 1e-9);
        }
    }

    fn tiny_training_split() -> (GameConfig, Dataset) {
        let cfg = GameConfig::default();
        (cfg.clone(), generate_dataset(&cfg, 300, 31).unwrap())
    }

    #[test]
    fn two_step_training_pipeline_and_bundle_round_trip() {
        let (cfg, train) = tiny_training_split();
        let settings = FitSettings {
            epochs: 2,
            n_mc: 2,
            ..FitSettings::default()
        };
        let trained = train_two_step(&train, &cfg, &settings, 5).unwrap();
        assert_eq!(trained.score_table.rows.len(), train.len());
        assert!(trained.scored_train.s1.iter().all(Option::is_some));
        assert!(trained.scored_train.s2.iter().all(Option::is_some));

        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::new("train", cfg.digest());
        manifest.model = Some(two_step_meta(&trained, "dsdigest".into(), 0.8, 5));
        trained.model.save_bundle(dir.path(), &manifest).unwrap();
        let (loaded, back) = TwoStepModel::load_bundle(dir.path()).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(loaded.g1.params, trained.model.g1.params);
        assert_eq!(loaded.g2.params, trained.model.g2.params);
        assert_eq!(loaded.drb_stats, trained.model.drb_stats);

        // a single-step bundle does not load as two-step
        assert!(SingleStepModel::load_bundle(dir.path()).is_err());
    }

    #[test]
    fn single_step_training_and_bundle_round_trip() {
        let (cfg, train) = tiny_training_split();
        let settings = FitSettings {
            epochs: 2,
            ..FitSettings::default()
        };
        let trained = train_single_step(&train, &cfg, &settings, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = RunManifest::new("train", cfg.digest());
        manifest.model = Some(single_step_meta(&trained, "dsdigest".into(), 0.8, 6));
        trained.model.save_bundle(dir.path(), &manifest).unwrap();
        let (loaded, _) = SingleStepModel::load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.g.params, trained.model.g.params);
        assert_eq!(loaded.query_score, trained.model.query_score);
    }

    #[test]
    fn two_step_training_is_deterministic() {
        let (cfg, train) = tiny_training_split();
        let settings = FitSettings {
            epochs: 1,
            n_mc: 2,
            ..FitSettings::default()
        };
        let a = train_two_step(&train, &cfg, &settings, 9).unwrap();
        let b = train_two_step(&train, &cfg, &settings, 9).unwrap();
        assert_eq!(a.model.g1.params, b.model.g1.params);
        assert_eq!(a.model.g2.params, b.model.g2.params);
        assert_eq!(a.score_table, b.score_table);
    }
}
