//! Conditional adversarial training of action generators.
//!
//! A generator maps `[condition, quality score, noise]` to an action; a
//! discriminator scores `[condition, quality score, action]` tuples as
//! real or generated. Both see the quality score, so the learned
//! conditional distribution is shaped by it and can later be queried with
//! high scores to request effective actions.
//!
//! Training follows the original minimax discriminator loss with the
//! non-saturating generator loss, runs single-threaded, and is bitwise
//! reproducible for a fixed seed. Conditions and actions are standardized
//! to zero mean and unit variance with training-split statistics (raw
//! units differ by orders of magnitude); scores are already in [0,1] and
//! noise is already standard normal, so both pass through unscaled. The
//! generator emits standardized actions internally and de-standardizes on
//! sampling.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, backward_from_trace, forward, forward_trace, init_params, Activation, Gradients,
    MlpParams, MlpSpec, OptimizerState,
};
use crate::rng::seeded_rng;
use crate::textio::{parse_f64, push_kv_floats, read_file, write_file};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Probabilities are clamped to this band inside the losses to keep
/// log terms finite.
const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Architecture of one conditional GAN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GanSpec {
    pub condition_dim: usize,
    pub noise_dim: usize,
    pub action_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl GanSpec {
    /// Reference architecture: 2-dim noise, 2-dim actions, generator
    /// hidden widths 96/64, discriminator hidden widths 64/32.
    pub fn new(condition_dim: usize) -> GanSpec {
        GanSpec {
            condition_dim,
            noise_dim: 2,
            action_dim: 2,
            gen_hidden: vec![96, 64],
            disc_hidden: vec![64, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition_dim == 0 || self.noise_dim == 0 || self.action_dim == 0 {
            return Err(Error::Invalid(format!("all GAN dims must be >= 1: {self:?}")));
        }
        if self.gen_hidden.is_empty() || self.disc_hidden.is_empty() {
            return Err(Error::Invalid("GAN hidden widths must be non-empty".into()));
        }
        Ok(())
    }

    /// Generator input: condition, score slot, then noise.
    pub fn generator_input_width(&self) -> usize {
        self.condition_dim + 1 + self.noise_dim
    }

    /// Discriminator input: condition, score slot, then action.
    pub fn discriminator_input_width(&self) -> usize {
        self.condition_dim + 1 + self.action_dim
    }

    /// Rectifier hidden layers with an identity output in standardized
    /// action space.
    pub fn generator_mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.generator_input_width()];
        sizes.extend_from_slice(&self.gen_hidden);
        sizes.push(self.action_dim);
        MlpSpec::new(sizes, Activation::Relu, Activation::Identity).expect("validated spec")
    }

    /// Leaky-rectifier hidden layers with a logistic output unit.
    pub fn discriminator_mlp_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.discriminator_input_width()];
        sizes.extend_from_slice(&self.disc_hidden);
        sizes.push(1);
        MlpSpec::new(sizes, Activation::LeakyRelu, Activation::Sigmoid).expect("validated spec")
    }
}

/// Adversarial-loop settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub seed: u64,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
}

impl TrainConfig {
    /// Desk-scale defaults: 300 epochs, batch 128, lr 2e-4 for both
    /// networks, one discriminator step per generator step.
    pub fn new(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 300,
            batch_size: 128,
            lr_gen: 2e-4,
            lr_disc: 2e-4,
            seed,
            disc_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.disc_steps == 0 {
            return Err(Error::Invalid(
                "epochs, batch_size, disc_steps must be positive".into(),
            ));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dimension zero-mean / unit-variance scaling fitted on training
/// rows. Constant dimensions scale by 1 to stay invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> Standardizer {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| v * s + m)
            .collect()
    }
}

/// One training example: what the pursuer observed, how good the played
/// action turned out to be, and the action itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub condition: Vec<f64>,
    pub score: f64,
    pub action: Vec<f64>,
}

/// A trained conditional generator with its frozen standardization
/// statistics. Immutable after training; safe to sample concurrently
/// with caller-supplied random sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub params: MlpParams,
    pub spec: GanSpec,
    pub cond_stats: Standardizer,
    pub action_stats: Standardizer,
}

impl Generator {
    fn new(
        params: MlpParams,
        spec: GanSpec,
        cond_stats: Standardizer,
        action_stats: Standardizer,
    ) -> Generator {
        assert_eq!(
            params.spec,
            spec.generator_mlp_spec(),
            "generator network shape must match the GAN spec wiring"
        );
        Generator {
            params,
            spec,
            cond_stats,
            action_stats,
        }
    }
}

/// Draw a conditioned action: standardize the condition, append the query
/// score and a standard-normal noise draw, run the generator, and
/// de-standardize the output back to action units.
pub fn sample_generator(
    g: &Generator,
    condition: &[f64],
    score: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert_eq!(
        condition.len(),
        g.spec.condition_dim,
        "condition width {} != spec condition width {}",
        condition.len(),
        g.spec.condition_dim
    );
    let mut input = g.cond_stats.apply(condition);
    input.push(score);
    for _ in 0..g.spec.noise_dim {
        input.push(StandardNormal.sample(rng));
    }
    g.action_stats.invert(&forward(&g.params, &input))
}

fn validate_pairs(pairs: &[TrainPair], spec: &GanSpec, cfg: &TrainConfig) -> Result<()> {
    if pairs.len() < 2 * cfg.batch_size {
        return Err(Error::Invalid(format!(
            "need at least 2*batch_size = {} pairs, got {}",
            2 * cfg.batch_size,
            pairs.len()
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.condition.len() != spec.condition_dim {
            return Err(Error::Invalid(format!(
                "pair {i}: condition width {} != {}",
                p.condition.len(),
                spec.condition_dim
            )));
        }
        if p.action.len() != spec.action_dim {
            return Err(Error::Invalid(format!(
                "pair {i}: action width {} != {}",
                p.action.len(),
                spec.action_dim
            )));
        }
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::Invalid(format!(
                "pair {i}: score {} outside [0,1]",
                p.score
            )));
        }
        if p.condition.iter().chain(p.action.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("pair {i}: non-finite feature")));
        }
    }
    Ok(())
}

/// One discriminator ascent step on a batch of real and fake input
/// vectors (already standardized, score included). Returns the batch
/// loss.
fn disc_batch_update(
    d: &mut MlpParams,
    opt: &mut OptimizerState,
    grads: &mut Gradients,
    real_inputs: &[Vec<f64>],
    fake_inputs: &[Vec<f64>],
) -> f64 {
    grads.reset();
    let mut loss = 0.0;
    for x in real_inputs {
        let trace = forward_trace(d, x);
        let p = clamp_prob(trace.output()[0]);
        loss += -p.ln();
        backward_from_trace(d, &trace, &[-1.0 / p], grads);
    }
    for x in fake_inputs {
        let trace = forward_trace(d, x);
        let p = clamp_prob(trace.output()[0]);
        loss += -(1.0 - p).ln();
        backward_from_trace(d, &trace, &[1.0 / (1.0 - p)], grads);
    }
    let n = (real_inputs.len() + fake_inputs.len()).max(1) as f64;
    grads.scale(1.0 / n);
    loss /= n;
    assert!(loss.is_finite(), "discriminator loss diverged");
    adam_step(d, grads, opt);
    loss
}

/// Train a conditional generator against a discriminator on
/// (condition, score, action) triples.
///
/// Alternates discriminator steps on real versus generated actions with
/// non-saturating generator steps; returns the generator with its frozen
/// standardization statistics.
pub fn train_conditional_gan(
    pairs: &[TrainPair],
    spec: &GanSpec,
    cfg: &TrainConfig,
) -> Result<Generator> {
    spec.validate()?;
    cfg.validate()?;
    validate_pairs(pairs, spec, cfg)?;

    let cond_rows: Vec<Vec<f64>> = pairs.iter().map(|p| p.condition.clone()).collect();
    let action_rows: Vec<Vec<f64>> = pairs.iter().map(|p| p.action.clone()).collect();
    let cond_stats = Standardizer::fit(&cond_rows, spec.condition_dim);
    let action_stats = Standardizer::fit(&action_rows, spec.action_dim);

    // Pre-standardized views used throughout the loop.
    let conds: Vec<Vec<f64>> = cond_rows.iter().map(|c| cond_stats.apply(c)).collect();
    let actions: Vec<Vec<f64>> = action_rows.iter().map(|a| action_stats.apply(a)).collect();
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();

    let mut rng = seeded_rng(cfg.seed);
    let mut gen = init_params(&spec.generator_mlp_spec(), &mut rng);
    let mut disc = init_params(&spec.discriminator_mlp_spec(), &mut rng);
    let mut opt_g = OptimizerState::new(&gen).with_learning_rate(cfg.lr_gen);
    let mut opt_d = OptimizerState::new(&disc).with_learning_rate(cfg.lr_disc);
    let mut grads_g = Gradients::zeros_like(&gen);
    let mut grads_d = Gradients::zeros_like(&disc);
    let mut disc_scratch = Gradients::zeros_like(&disc);

    let gen_input = |i: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x = conds[i].clone();
        x.push(scores[i]);
        for _ in 0..spec.noise_dim {
            x.push(StandardNormal.sample(rng));
        }
        x
    };
    let disc_input = |i: usize, action: &[f64]| -> Vec<f64> {
        let mut x = conds[i].clone();
        x.push(scores[i]);
        x.extend_from_slice(action);
        x
    };

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks_exact(cfg.batch_size) {
            for _ in 0..cfg.disc_steps {
                let real_inputs: Vec<Vec<f64>> =
                    batch.iter().map(|&i| disc_input(i, &actions[i])).collect();
                let fake_inputs: Vec<Vec<f64>> = batch
                    .iter()
                    .map(|&i| {
                        let fake = forward(&gen, &gen_input(i, &mut rng));
                        disc_input(i, &fake)
                    })
                    .collect();
                disc_batch_update(&mut disc, &mut opt_d, &mut grads_d, &real_inputs, &fake_inputs);
            }

            // Non-saturating generator step: ascend log D(fake).
            grads_g.reset();
            let mut g_loss = 0.0;
            for &i in batch {
                let g_in = gen_input(i, &mut rng);
                let g_trace = forward_trace(&gen, &g_in);
                let d_in = disc_input(i, g_trace.output());
                let d_trace = forward_trace(&disc, &d_in);
                let p = clamp_prob(d_trace.output()[0]);
                g_loss += -p.ln();
                disc_scratch.reset();
                let d_input_grad =
                    backward_from_trace(&disc, &d_trace, &[-1.0 / p], &mut disc_scratch);
                let upstream_g = &d_input_grad[spec.condition_dim + 1..];
                backward_from_trace(&gen, &g_trace, upstream_g, &mut grads_g);
            }
            grads_g.scale(1.0 / batch.len() as f64);
            g_loss /= batch.len() as f64;
            assert!(g_loss.is_finite(), "generator loss diverged");
            adam_step(&mut gen, &grads_g, &mut opt_g);
        }
    }

    gen.assert_finite();
    Ok(Generator::new(gen, spec.clone(), cond_stats, action_stats))
}

/// Stage-1 training pairs: condition = Red's observed opening action,
/// score = s1, action = Blue's stage-1 action.
pub fn make_g1_pairs(train: &Dataset) -> Result<Vec<TrainPair>> {
    train
        .rows
        .iter()
        .zip(&train.s1)
        .map(|(r, s1)| {
            let score = s1.ok_or_else(|| {
                Error::Invalid(format!("episode {}: s1 score not attached", r.episode_id))
            })?;
            Ok(TrainPair {
                condition: vec![r.r1.speed, r.r1.heading],
                score,
                action: vec![r.b1.speed, r.b1.heading],
            })
        })
        .collect()
}

/// Stage-2 training pairs: condition = both of Red's observed actions
/// plus the remaining speed budget, score = s2, action = Blue's stage-2
/// action.
pub fn make_g2_pairs(train: &Dataset) -> Result<Vec<TrainPair>> {
    train
        .rows
        .iter()
        .zip(&train.s2)
        .map(|(r, s2)| {
            let score = s2.ok_or_else(|| {
                Error::Invalid(format!("episode {}: s2 score not attached", r.episode_id))
            })?;
            Ok(TrainPair {
                condition: vec![
                    r.r1.speed,
                    r.r1.heading,
                    r.r2.speed,
                    r.r2.heading,
                    r.v_cap_rem,
                ],
                score,
                action: vec![r.b2.speed, r.b2.heading],
            })
        })
        .collect()
}

impl Generator {
    /// Write the generator bundle: `weights.txt` (MLPv1), `gan_spec.txt`,
    /// and `standardize.txt`, all plain text.
    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        self.params.save(&dir.join("weights.txt"))?;

        let mut spec_text = String::new();
        spec_text.push_str(&format!("condition_dim={}\n", self.spec.condition_dim));
        spec_text.push_str(&format!("noise_dim={}\n", self.spec.noise_dim));
        spec_text.push_str(&format!("action_dim={}\n", self.spec.action_dim));
        let widths =
            |ws: &[usize]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" ");
        spec_text.push_str(&format!("gen_hidden={}\n", widths(&self.spec.gen_hidden)));
        spec_text.push_str(&format!("disc_hidden={}\n", widths(&self.spec.disc_hidden)));
        spec_text.push_str(&format!(
            "hidden_activation={}\n",
            self.params.spec.hidden_activation.name()
        ));
        spec_text.push_str(&format!(
            "output_activation={}\n",
            self.params.spec.output_activation.name()
        ));
        write_file(&dir.join("gan_spec.txt"), &spec_text)?;

        let mut std_text = String::new();
        push_kv_floats(&mut std_text, "cond_mean", &self.cond_stats.mean);
        push_kv_floats(&mut std_text, "cond_std", &self.cond_stats.std);
        push_kv_floats(&mut std_text, "action_mean", &self.action_stats.mean);
        push_kv_floats(&mut std_text, "action_std", &self.action_stats.std);
        write_file(&dir.join("standardize.txt"), &std_text)?;
        Ok(())
    }

    pub fn load_bundle(dir: &Path) -> Result<Generator> {
        let spec_text = read_file(&dir.join("gan_spec.txt"))?;
        let mut kv = std::collections::BTreeMap::new();
        for line in spec_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Invalid(format!("gan_spec.txt missing key {k:?}")))
        };
        let usize_of = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad {k} in gan_spec.txt")))
        };
        let widths_of = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Invalid(format!("bad {k} in gan_spec.txt")))
                })
                .collect()
        };
        let spec = GanSpec {
            condition_dim: usize_of("condition_dim")?,
            noise_dim: usize_of("noise_dim")?,
            action_dim: usize_of("action_dim")?,
            gen_hidden: widths_of("gen_hidden")?,
            disc_hidden: widths_of("disc_hidden")?,
        };
        spec.validate()?;
        let hidden = Activation::from_name(get("hidden_activation")?)?;
        let output = Activation::from_name(get("output_activation")?)?;
        let params = MlpParams::load(&dir.join("weights.txt"), hidden, output)?;

        let std_text = read_file(&dir.join("standardize.txt"))?;
        let mut floats = std::collections::BTreeMap::new();
        for line in std_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let values: Vec<f64> = v
                    .split_whitespace()
                    .map(|t| parse_f64(t, k))
                    .collect::<Result<_>>()?;
                floats.insert(k.trim().to_string(), values);
            }
        }
        let take = |k: &str, dim: usize| -> Result<Vec<f64>> {
            let v = floats
                .get(k)
                .ok_or_else(|| Error::Invalid(format!("standardize.txt missing {k:?}")))?;
            if v.len() != dim {
                return Err(Error::Invalid(format!(
                    "standardize.txt {k}: {} values for width {dim}",
                    v.len()
                )));
            }
            Ok(v.clone())
        };
        let cond_stats = Standardizer {
            mean: take("cond_mean", spec.condition_dim)?,
            std: take("cond_std", spec.condition_dim)?,
        };
        let action_stats = Standardizer {
            mean: take("action_mean", spec.action_dim)?,
            std: take("action_std", spec.action_dim)?,
        };
        Ok(Generator::new(params, spec, cond_stats, action_stats))
    }

    /// Digest over the bundle's numeric content.
    pub fn digest(&self) -> String {
        let mut text = self.params.to_weight_text();
        push_kv_floats(&mut text, "cond_mean", &self.cond_stats.mean);
        push_kv_floats(&mut text, "cond_std", &self.cond_stats.std);
        push_kv_floats(&mut text, "action_mean", &self.action_stats.mean);
        push_kv_floats(&mut text, "action_std", &self.action_stats.std);
        crate::textio::sha256_hex(text.as_bytes())
    }

    /// Build a generator that ignores its inputs and always emits
    /// `action` (zero weights, bias set, identity scaling). A
    /// deterministic stand-in for a trained network in tests and
    /// diagnostics.
    pub fn constant(spec: &GanSpec, action: &[f64]) -> Generator {
        assert_eq!(action.len(), spec.action_dim);
        let mlp = spec.generator_mlp_spec();
        let mut params = MlpParams {
            weights: mlp
                .layer_sizes
                .windows(2)
                .map(|w| vec![0.0; w[0] * w[1]])
                .collect(),
            biases: mlp.layer_sizes[1..].iter().map(|&w| vec![0.0; w]).collect(),
            spec: mlp,
        };
        let last = params.biases.len() - 1;
        params.biases[last] = action.to_vec();
        let id = |dim: usize| Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        };
        Generator::new(params, spec.clone(), id(spec.condition_dim), id(spec.action_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fit_minmax, generate_dataset};
    use crate::game::GameConfig;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn toy_pairs(n: usize, seed: u64) -> Vec<TrainPair> {
        // action = 2 * condition + small noise, constant score
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let c: f64 = rng.gen_range(-1.0..1.0);
                let eps: f64 = StandardNormal.sample(&mut rng);
                TrainPair {
                    condition: vec![c],
                    score: 1.0,
                    action: vec![2.0 * c + 0.05 * eps],
                }
            })
            .collect()
    }

    fn toy_spec() -> GanSpec {
        GanSpec {
            condition_dim: 1,
            noise_dim: 2,
            action_dim: 1,
            gen_hidden: vec![96, 64],
            disc_hidden: vec![64, 32],
        }
    }

    #[test]
    fn wiring_widths() {
        let spec = GanSpec::new(5);
        assert_eq!(spec.generator_input_width(), 5 + 1 + 2);
        assert_eq!(spec.discriminator_input_width(), 5 + 1 + 2);
        assert_eq!(spec.generator_mlp_spec().layer_sizes, vec![8, 96, 64, 2]);
        assert_eq!(spec.discriminator_mlp_spec().layer_sizes, vec![8, 64, 32, 1]);
        assert!(GanSpec {
            condition_dim: 0,
            ..GanSpec::new(1)
        }
        .validate()
        .is_err());
    }

    #[test]
    #[should_panic(expected = "wiring")]
    fn generator_rejects_mismatched_network() {
        let spec = GanSpec::new(2);
        let other = GanSpec::new(3);
        let params = init_params(&other.generator_mlp_spec(), &mut seeded_rng(0));
        let id = Standardizer {
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
        };
        let id2 = id.clone();
        let _ = Generator::new(params, spec, id, id2);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let spec = toy_spec();
        let cfg = TrainConfig::new(1);
        assert!(train_conditional_gan(&toy_pairs(50, 1), &spec, &cfg).is_err());
        let mut pairs = toy_pairs(300, 1);
        pairs[7].score = 1.5;
        assert!(train_conditional_gan(&pairs, &spec, &cfg).is_err());
        let mut pairs = toy_pairs(300, 1);
        pairs[3].action[0] = f64::NAN;
        assert!(train_conditional_gan(&pairs, &spec, &cfg).is_err());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let spec = toy_spec();
        let mut cfg = TrainConfig::new(9);
        cfg.epochs = 3;
        cfg.batch_size = 64;
        let pairs = toy_pairs(256, 2);
        let a = train_conditional_gan(&pairs, &spec, &cfg).unwrap();
        let b = train_conditional_gan(&pairs, &spec, &cfg).unwrap();
        assert_eq!(a.params.to_weight_text(), b.params.to_weight_text());
        let mut cfg2 = cfg.clone();
        cfg2.seed = 10;
        let c = train_conditional_gan(&pairs, &spec, &cfg2).unwrap();
        assert_ne!(a.params.to_weight_text(), c.params.to_weight_text());
    }

    #[test]
    fn generator_collapses_onto_constant_data() {
        // Every real action is (3, 1); a working adversarial loop pulls
        // the generator output there.
        let spec = GanSpec::new(1);
        let pairs: Vec<TrainPair> = (0..512)
            .map(|i| TrainPair {
                condition: vec![i as f64 / 512.0],
                score: 1.0,
                action: vec![3.0, 1.0],
            })
            .collect();
        let mut cfg = TrainConfig::new(4);
        cfg.epochs = 60;
        let g = train_conditional_gan(&pairs, &spec, &cfg).unwrap();
        let mut rng = seeded_rng(5);
        let mut mean = [0.0; 2];
        let n = 200;
        for _ in 0..n {
            let a = sample_generator(&g, &[0.5], 1.0, &mut rng);
            mean[0] += a[0] / n as f64;
            mean[1] += a[1] / n as f64;
        }
        assert!((mean[0] - 3.0).abs() < 0.3, "mean speed {}", mean[0]);
        assert!((mean[1] - 1.0).abs() < 0.3, "mean heading {}", mean[1]);
    }

    #[test]
    fn discriminator_separates_linearly_separable_sets() {
        // Real actions cluster at +2, fakes at -2; a trained
        // discriminator should classify both sides nearly perfectly.
        let spec = toy_spec();
        let mut d = init_params(&spec.discriminator_mlp_spec(), &mut seeded_rng(3));
        let mut opt = OptimizerState::new(&d).with_learning_rate(1e-3);
        let mut grads = Gradients::zeros_like(&d);
        let mut rng = seeded_rng(6);
        let draw = |rng: &mut ChaCha8Rng, center: f64| -> Vec<f64> {
            let c: f64 = rng.gen_range(-1.0..1.0);
            vec![c, 1.0, center + 0.1 * c]
        };
        for _ in 0..300 {
            let real: Vec<Vec<f64>> = (0..32).map(|_| draw(&mut rng, 2.0)).collect();
            let fake: Vec<Vec<f64>> = (0..32).map(|_| draw(&mut rng, -2.0)).collect();
            disc_batch_update(&mut d, &mut opt, &mut grads, &real, &fake);
        }
        let mut correct = 0;
        let total = 400;
        for _ in 0..total / 2 {
            let p = forward(&d, &draw(&mut rng, 2.0))[0];
            assert!(p > 0.0 && p < 1.0, "discriminator output must stay in (0,1)");
            if p > 0.5 {
                correct += 1;
            }
            let p = forward(&d, &draw(&mut rng, -2.0))[0];
            assert!(p > 0.0 && p < 1.0);
            if p < 0.5 {
                correct += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let spec = toy_spec();
        let mut cfg = TrainConfig::new(2);
        cfg.epochs = 2;
        let g = train_conditional_gan(&toy_pairs(300, 3), &spec, &cfg).unwrap();
        let a = sample_generator(&g, &[0.3], 0.9, &mut seeded_rng(42));
        let b = sample_generator(&g, &[0.3], 0.9, &mut seeded_rng(42));
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn standardizer_round_trips() {
        let rows: Vec<Vec<f64>> = vec![vec![5.0, 1.9], vec![4.4, 2.1], vec![6.1, 1.7]];
        let s = Standardizer::fit(&rows, 2);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (a, b) in r.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        // constant dimension stays invertible
        let rows = vec![vec![7.0], vec![7.0]];
        let s = Standardizer::fit(&rows, 1);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.invert(&s.apply(&[7.0]))[0], 7.0);
    }

    #[test]
    fn g1_and_g2_pairs_map_rows_positionally() {
        let cfg = GameConfig::default();
        let ds = generate_dataset(&cfg, 3, 77).unwrap();
        let stats = fit_minmax(&ds.d_rb_values()).unwrap();
        let ds = ds.attach_s2(stats);
        let ds = ds.attach_s1(vec![0.5, 0.25, 1.0]).unwrap();

        let g1 = make_g1_pairs(&ds).unwrap();
        assert_eq!(g1.len(), 3);
        for (p, r) in g1.iter().zip(&ds.rows) {
            assert_eq!(p.condition, vec![r.r1.speed, r.r1.heading]);
            assert_eq!(p.action, vec![r.b1.speed, r.b1.heading]);
        }
        assert_eq!(g1[1].score, 0.25);

        let g2 = make_g2_pairs(&ds).unwrap();
        for ((p, r), s2) in g2.iter().zip(&ds.rows).zip(&ds.s2) {
            assert_eq!(p.condition.len(), 5);
            assert_eq!(p.condition[4], r.v_cap_rem);
            assert_eq!(p.action, vec![r.b2.speed, r.b2.heading]);
            assert_eq!(p.score, s2.unwrap());
        }
    }

    #[test]
    fn pair_builders_require_scores() {
        let cfg = GameConfig::default();
        let ds = generate_dataset(&cfg, 3, 78).unwrap();
        assert!(make_g1_pairs(&ds).is_err());
        assert!(make_g2_pairs(&ds).is_err());
    }

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GanSpec::new(5);
        let mut cfg = TrainConfig::new(8);
        cfg.epochs = 1;
        let pairs: Vec<TrainPair> = (0..300)
            .map(|i| {
                let x = i as f64 / 300.0;
                TrainPair {
                    condition: vec![x, 1.0 - x, 0.5, x * x, 2.0],
                    score: x,
                    action: vec![x + 1.0, -x],
                }
            })
            .collect();
        let g = train_conditional_gan(&pairs, &spec, &cfg).unwrap();
        g.save_bundle(dir.path()).unwrap();
        let back = Generator::load_bundle(dir.path()).unwrap();
        assert_eq!(g, back);
        let a = sample_generator(&g, &[0.1, 0.9, 0.5, 0.01, 2.0], 0.98, &mut seeded_rng(1));
        let b = sample_generator(&back, &[0.1, 0.9, 0.5, 0.01, 2.0], 0.98, &mut seeded_rng(1));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_generator_ignores_everything() {
        let spec = GanSpec::new(2);
        let g = Generator::constant(&spec, &[4.5, 1.9]);
        let out = sample_generator(&g, &[100.0, -3.0], 0.1, &mut seeded_rng(9));
        assert_eq!(out, vec![4.5, 1.9]);
    }
}
