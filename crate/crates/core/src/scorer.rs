//! The quality-score system.
//!
//! Stage-2 scores come straight from end-point distances
//! (`s2 = 1 - eta(d_rb)`, attached in the dataset module). Stage-1 scores
//! need a trained stage-2 generator: for each episode the generator is
//! queried `n_mc` times with the episode's recorded features and a
//! near-maximal query score, each sampled stage-2 action is replayed
//! against the episode's fixed stage-1 geometry, and the resulting
//! end-point distances average into `alpha`. Then `s1 = 1 - eta(alpha)`
//! with the normalization fitted over the table's alphas.

use crate::cgan::{sample_generator, Generator};
use crate::dataset::{eta, fit_minmax, Dataset, MinMax};
use crate::error::{Error, Result};
use crate::game::{self, EpisodeRecord, GameConfig, PolarAction};
use crate::rng::derived_rng;
use crate::textio::{fmt_f64, parse_f64, parse_u64, read_file, write_file};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// The concrete constant standing in for a "near 1" query score.
pub const QUERY_SCORE: f64 = 0.98;

/// Per-episode stage-1 quality scores and their Monte-Carlo distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub episode_id: u64,
    /// Mean end-point distance over the Monte-Carlo queries.
    pub alpha: f64,
    pub s1: f64,
}

/// Output of the stage-1 score construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub n_mc: usize,
    /// Min-max bounds of the alphas, backing the s1 normalization.
    pub alpha_stats: MinMax,
}

/// Replay one episode's fixed stage-1 geometry with a substituted stage-2
/// action for the pursuer, returning the end-point distance. Red's path
/// is exactly the recorded one.
pub fn replay_stage2(cfg: &GameConfig, row: &EpisodeRecord, b2: PolarAction) -> f64 {
    let half = cfg.half();
    let blue_mid = game::position_after(cfg.blue_start, row.b1, half);
    let blue_end = game::position_after(blue_mid, b2, half);
    game::endpoint_distance(row.red_end, blue_end)
}

/// Construct stage-1 scores with an arbitrary stage-2 action source. The
/// sampler sees the episode row, the Monte-Carlo index, the query score,
/// and a per-episode random source.
pub fn build_s1_scores_with<F>(
    sampler: F,
    ds: &Dataset,
    cfg: &GameConfig,
    n_mc: usize,
    seed: u64,
) -> Result<ScoreTable>
where
    F: Fn(&EpisodeRecord, usize, f64, &mut ChaCha8Rng) -> PolarAction + Sync,
{
    if n_mc < 1 {
        return Err(Error::Invalid("build_s1_scores: n_mc must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::Invalid("build_s1_scores: empty dataset".into()));
    }
    let alphas: Vec<(u64, f64)> = ds
        .rows
        .par_iter()
        .map(|row| {
            let mut rng = derived_rng(seed, row.episode_id);
            let mut total = 0.0;
            for j in 0..n_mc {
                let b2 = sampler(row, j, QUERY_SCORE, &mut rng);
                total += replay_stage2(cfg, row, b2);
            }
            (row.episode_id, total / n_mc as f64)
        })
        .collect();

    let alpha_stats = fit_minmax(&alphas.iter().map(|&(_, a)| a).collect::<Vec<_>>())?;
    let rows = alphas
        .into_iter()
        .map(|(episode_id, alpha)| ScoreRow {
            episode_id,
            alpha,
            s1: 1.0 - eta(alpha_stats, alpha),
        })
        .collect();
    Ok(ScoreTable {
        rows,
        n_mc,
        alpha_stats,
    })
}

/// Construct stage-1 scores by querying a trained stage-2 generator with
/// each episode's recorded features and the near-maximal query score.
pub fn build_s1_scores(
    g2: &Generator,
    ds: &Dataset,
    cfg: &GameConfig,
    n_mc: usize,
    seed: u64,
) -> Result<ScoreTable> {
    if g2.spec.condition_dim != 5 {
        return Err(Error::Invalid(format!(
            "stage-2 generator must take 5 condition features, has {}",
            g2.spec.condition_dim
        )));
    }
    build_s1_scores_with(
        |row, _j, score, rng| {
            let condition = [
                row.r1.speed,
                row.r1.heading,
                row.r2.speed,
                row.r2.heading,
                row.v_cap_rem,
            ];
            let a = sample_generator(g2, &condition, score, rng);
            PolarAction::from_raw(a[0], a[1])
        },
        ds,
        cfg,
        n_mc,
        seed,
    )
}

/// Realized quality of an end-point distance under the training
/// normalization: `1 - eta(d)`.
pub fn realized_score(stats: MinMax, d: f64) -> f64 {
    1.0 - eta(stats, d)
}

impl ScoreTable {
    /// Scores in dataset row order (the table preserves input order).
    pub fn s1_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.s1).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# n_mc={} query_score={}\n", self.n_mc, QUERY_SCORE));
        out.push_str("episode_id,alpha,s1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.episode_id,
                fmt_f64(r.alpha),
                fmt_f64(r.s1)
            ));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<ScoreTable> {
        let mut rows = Vec::new();
        let mut n_mc = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "episode_id,alpha,s1" {
                continue;
            }
            if line.starts_with('#') {
                for tok in line.trim_start_matches('#').split_whitespace() {
                    if let Some(v) = tok.strip_prefix("n_mc=") {
                        n_mc = parse_u64(v, "n_mc")? as usize;
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Invalid(format!("bad score row: {line:?}")));
            }
            rows.push(ScoreRow {
                episode_id: parse_u64(cols[0], "episode_id")?,
                alpha: parse_f64(cols[1], "alpha")?,
                s1: parse_f64(cols[2], "s1")?,
            });
        }
        if rows.is_empty() {
            return Err(Error::Invalid("empty score table".into()));
        }
        let alpha_stats = fit_minmax(&rows.iter().map(|r| r.alpha).collect::<Vec<_>>())?;
        Ok(ScoreTable {
            rows,
            n_mc,
            alpha_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }

    pub fn load(path: &Path) -> Result<ScoreTable> {
        Self::from_csv_str(&read_file(path)?)
    }
}
