//! Episode batches: generation, normalization statistics, quality-score
//! attachment, train/test splitting, and persistence.
//!
//! The on-disk interchange format is a CSV with header
//! `episode_id,v1_r,theta1_r,v1_b,theta1_b,v2_r,theta2_r,v2_b,v_cap_rem,theta2_b,d_rb,s2,s1`
//! (angles in radians, floats with 17 significant digits, score columns
//! empty until attached), preceded by a `#` provenance comment carrying
//! the config digest and master seed. Normalization statistics go to a
//! JSON file with the same provenance comment.

use crate::error::{Error, Result};
use crate::game::{self, EpisodeRecord, GameConfig, PolarAction};
use crate::rng::{derive_seed, seeded_rng};
use crate::textio::{fmt_f64, parse_f64, parse_u64, read_file, sha256_hex, write_file};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CSV_HEADER: &str =
    "episode_id,v1_r,theta1_r,v1_b,theta1_b,v2_r,theta2_r,v2_b,v_cap_rem,theta2_b,d_rb,s2,s1";

/// Feature names carried in the CSV, in column order (scores excluded).
pub const FEATURE_NAMES: [&str; 10] = [
    "v1_r", "theta1_r", "v1_b", "theta1_b", "v2_r", "theta2_r", "v2_b", "v_cap_rem", "theta2_b",
    "d_rb",
];

/// Min-max bounds for one quantity, fitted on training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

/// Mean and (population) standard deviation for one feature, fitted on
/// training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Normalization statistics: min-max entries for score normalization and
/// mean/std entries for network input/output standardization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub minmax: BTreeMap<String, MinMax>,
    pub meanstd: BTreeMap<String, MeanStd>,
}

/// Fit min-max bounds over a non-empty list of values.
pub fn fit_minmax(values: &[f64]) -> Result<MinMax> {
    if values.is_empty() {
        return Err(Error::Invalid("fit_minmax: empty value list".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Invalid(format!("fit_minmax: non-finite value {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    Ok(MinMax { min, max })
}

/// Min-max normalize `v` into [0,1], clamping out-of-range values. A
/// degenerate fit (max = min) maps everything to 0.
pub fn eta(stats: MinMax, v: f64) -> f64 {
    if stats.max == stats.min {
        return 0.0;
    }
    ((v - stats.min) / (stats.max - stats.min)).clamp(0.0, 1.0)
}

/// Fit mean and population standard deviation.
pub fn fit_meanstd(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Invalid("fit_meanstd: empty value list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
    })
}

/// Where a dataset came from: enough to regenerate it bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub master_seed: u64,
    pub generator: String,
}

impl Provenance {
    pub fn new(cfg: &GameConfig, master_seed: u64) -> Self {
        Provenance {
            config_digest: cfg.digest(),
            master_seed,
            generator: format!("{}/{}", crate::TOOL_NAME, crate::TOOL_VERSION),
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# generator={} config_digest={} master_seed={}",
            self.generator, self.config_digest, self.master_seed
        )
    }

    fn parse_comment(line: &str) -> Result<Provenance> {
        let mut generator = None;
        let mut config_digest = None;
        let mut master_seed = None;
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                match k {
                    "generator" => generator = Some(v.to_string()),
                    "config_digest" => config_digest = Some(v.to_string()),
                    "master_seed" => master_seed = Some(parse_u64(v, "master_seed")?),
                    _ => {}
                }
            }
        }
        match (generator, config_digest, master_seed) {
            (Some(generator), Some(config_digest), Some(master_seed)) => Ok(Provenance {
                config_digest,
                master_seed,
                generator,
            }),
            _ => Err(Error::Invalid(format!("malformed provenance line: {line:?}"))),
        }
    }
}

/// An ordered batch of episodes with optional per-row quality scores.
/// Rows keep their original episode ids across splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<EpisodeRecord>,
    pub s2: Vec<Option<f64>>,
    pub s1: Vec<Option<f64>>,
    pub provenance: Provenance,
}

/// Generate `n` episodes under `cfg`. Each episode runs on its own random
/// source derived from `(master_seed, episode_id)`, so generation is
/// parallel yet deterministic and order-independent.
pub fn generate_dataset(cfg: &GameConfig, n: usize, master_seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Invalid("generate_dataset: n must be >= 1".into()));
    }
    cfg.validate()?;
    let rows: Vec<EpisodeRecord> = (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = seeded_rng(derive_seed(master_seed, id));
            game::simulate_episode(cfg, id, &mut rng)
        })
        .collect();
    Ok(Dataset {
        s2: vec![None; rows.len()],
        s1: vec![None; rows.len()],
        rows,
        provenance: Provenance::new(cfg, master_seed),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of rows whose end-point distance counts as a catch.
    pub fn success_fraction(&self, catch_eps: f64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let hits = self.rows.iter().filter(|r| r.d_rb < catch_eps).count();
        hits as f64 / self.rows.len() as f64
    }

    /// Column of end-point distances.
    pub fn d_rb_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.d_rb).collect()
    }

    /// Attach stage-2 quality scores `s2 = 1 - eta(d_rb)` to every row.
    /// `stats` must have been fitted on this dataset's training rows.
    pub fn attach_s2(mut self, stats: MinMax) -> Dataset {
        self.s2 = self.rows.iter().map(|r| Some(1.0 - eta(stats, r.d_rb))).collect();
        self
    }

    /// Attach externally computed stage-1 scores, aligned by row order.
    pub fn attach_s1(mut self, s1: Vec<f64>) -> Result<Dataset> {
        if s1.len() != self.rows.len() {
            return Err(Error::Invalid(format!(
                "attach_s1: {} scores for {} rows",
                s1.len(),
                self.rows.len()
            )));
        }
        self.s1 = s1.into_iter().map(Some).collect();
        Ok(self)
    }

    /// Seeded shuffle followed by a floor(n * train_frac) / remainder
    /// partition. Episode ids are preserved (unique but no longer
    /// contiguous in the parts).
    pub fn split(&self, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(Error::Invalid(format!(
                "split: train_frac must lie in (0,1), got {train_frac}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.shuffle(&mut seeded_rng(seed));
        let n_train = (self.rows.len() as f64 * train_frac).floor() as usize;
        let take = |ids: &[usize]| Dataset {
            rows: ids.iter().map(|&i| self.rows[i]).collect(),
            s2: ids.iter().map(|&i| self.s2[i]).collect(),
            s1: ids.iter().map(|&i| self.s1[i]).collect(),
            provenance: self.provenance.clone(),
        };
        Ok((take(&idx[..n_train]), take(&idx[n_train..])))
    }

    /// Serialize to the CSV interchange format.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.provenance.comment_line());
        out.push('\n');
        out.push_str(CSV_HEADER);
        out.push('\n');
        let score = |s: &Option<f64>| s.map(fmt_f64).unwrap_or_default();
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.episode_id,
                fmt_f64(r.r1.speed),
                fmt_f64(r.r1.heading),
                fmt_f64(r.b1.speed),
                fmt_f64(r.b1.heading),
                fmt_f64(r.r2.speed),
                fmt_f64(r.r2.heading),
                fmt_f64(r.b2.speed),
                fmt_f64(r.v_cap_rem),
                fmt_f64(r.b2.heading),
                fmt_f64(r.d_rb),
                score(&self.s2[i]),
                score(&self.s1[i]),
            ));
        }
        out
    }

    /// Parse the CSV interchange format. Endpoints and the violation flag
    /// are recomputed from the stored actions (the arithmetic path is the
    /// one that produced them, so the values are bit-identical). The
    /// stored config digest must match `cfg`.
    pub fn from_csv_str(text: &str, cfg: &GameConfig) -> Result<Dataset> {
        let mut lines = text.lines();
        let prov_line = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty dataset file".into()))?;
        let provenance = Provenance::parse_comment(prov_line)?;
        if provenance.config_digest != cfg.digest() {
            return Err(Error::Invalid(format!(
                "dataset was generated under config {} but {} was provided",
                provenance.config_digest,
                cfg.digest()
            )));
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("dataset file missing header".into()))?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Invalid(format!("unexpected dataset header: {header:?}")));
        }
        let half = cfg.half();
        let mut rows = Vec::new();
        let mut s2 = Vec::new();
        let mut s1 = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 13 {
                return Err(Error::Invalid(format!(
                    "row {}: expected 13 columns, got {}",
                    lineno + 3,
                    cols.len()
                )));
            }
            let episode_id = parse_u64(cols[0], "episode_id")?;
            if !seen.insert(episode_id) {
                return Err(Error::Invalid(format!("duplicate episode_id {episode_id}")));
            }
            let f = |i: usize| parse_f64(cols[i], FEATURE_NAMES[i - 1]);
            let r1 = PolarAction::new(f(1)?, f(2)?);
            let b1 = PolarAction::new(f(3)?, f(4)?);
            let r2 = PolarAction::new(f(5)?, f(6)?);
            let b2 = PolarAction::new(f(7)?, f(9)?);
            let v_cap_rem = f(8)?;
            let d_rb = f(10)?;
            let red_end = game::endpoint(cfg.red_start, r1, r2, half);
            let blue_end = game::endpoint(cfg.blue_start, b1, b2, half);
            let rec = EpisodeRecord {
                episode_id,
                r1,
                b1,
                r2,
                b2,
                v_cap_rem,
                d_rb,
                violated: b1.speed + b2.speed > cfg.v_cap,
                red_end,
                blue_end,
            };
            rec.validate(cfg)?;
            rows.push(rec);
            let opt = |s: &str, what| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f64(s, what).map(Some)
                }
            };
            s2.push(opt(cols[11], "s2")?);
            s1.push(opt(cols[12], "s1")?);
        }
        Ok(Dataset {
            rows,
            s2,
            s1,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_csv_string())
    }

    pub fn load(path: &Path, cfg: &GameConfig) -> Result<Dataset> {
        Self::from_csv_str(&read_file(path)?, cfg)
    }

    /// Digest of the serialized dataset, used to chain manifests.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_csv_string().as_bytes())
    }
}

impl NormStats {
    /// Fit the standard statistics bundle on (training) rows: min-max for
    /// `d_rb` plus mean/std for every feature column.
    pub fn fit(train: &Dataset) -> Result<NormStats> {
        let mut stats = NormStats::default();
        stats
            .minmax
            .insert("d_rb".into(), fit_minmax(&train.d_rb_values())?);
        let columns: [(&str, fn(&EpisodeRecord) -> f64); 10] = [
            ("v1_r", |r| r.r1.speed),
            ("theta1_r", |r| r.r1.heading),
            ("v1_b", |r| r.b1.speed),
            ("theta1_b", |r| r.b1.heading),
            ("v2_r", |r| r.r2.speed),
            ("theta2_r", |r| r.r2.heading),
            ("v2_b", |r| r.b2.speed),
            ("v_cap_rem", |r| r.v_cap_rem),
            ("theta2_b", |r| r.b2.heading),
            ("d_rb", |r| r.d_rb),
        ];
        for (name, get) in columns {
            let values: Vec<f64> = train.rows.iter().map(get).collect();
            stats.meanstd.insert(name.into(), fit_meanstd(&values)?);
        }
        Ok(stats)
    }

    /// Serialize with a provenance comment line on top of the JSON body.
    pub fn to_text(&self, provenance: &Provenance) -> String {
        let body = serde_json::to_string_pretty(self).expect("normstats serialize");
        format!("{}\n{}\n", provenance.comment_line(), body)
    }

    pub fn from_text(text: &str) -> Result<(NormStats, Provenance)> {
        let mut provenance = None;
        let mut body = String::new();
        for line in text.lines() {
            if line.starts_with('#') {
                if provenance.is_none() {
                    provenance = Some(Provenance::parse_comment(line)?);
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let provenance =
            provenance.ok_or_else(|| Error::Invalid("normstats file missing provenance".into()))?;
        let stats: NormStats = serde_json::from_str(&body)
            .map_err(|e| Error::Invalid(format!("bad normstats json: {e}")))?;
        Ok((stats, provenance))
    }

    pub fn save(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        write_file(path, &self.to_text(provenance))
    }

    pub fn load(path: &Path) -> Result<(NormStats, Provenance)> {
        Self::from_text(&read_file(path)?)
    }
}
