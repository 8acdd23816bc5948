//! The two-stage pursuit-evasion game.
//!
//! A game runs for `t_total` time steps split into two equal stages. Each
//! agent holds one (speed, heading) action per stage. Red (the evader)
//! initiates the game with a randomly drawn stage-1 action; Blue (the
//! pursuer) observes it and aims for Red's projected destination. At
//! mid-game Red observes Blue's position and swerves to the point of its
//! safety circle farthest from Blue; Blue re-aims, subject to the speed
//! budget `v_cap` shared across both stages.
//!
//! Everything here is pure given its inputs and safe to call concurrently.

use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_f64, sha256_hex};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A point on the 2-D plane, in spatial units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite());
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Normalize an angle into the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// One agent's action for one stage: a speed (spatial units per step,
/// non-negative) and a heading (radians in (-pi, pi]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarAction {
    pub speed: f64,
    pub heading: f64,
}

impl PolarAction {
    /// Construct an action; the heading is wrapped into (-pi, pi].
    /// Panics on a negative speed — use [`PolarAction::from_raw`] for
    /// untrusted (e.g. network-sampled) values.
    pub fn new(speed: f64, heading: f64) -> Self {
        assert!(speed >= 0.0, "action speed must be non-negative: {speed}");
        PolarAction {
            speed,
            heading: wrap_angle(heading),
        }
    }

    /// Construct from raw values: speeds below zero clamp to zero, the
    /// heading is wrapped. Used where actions come from learned models.
    pub fn from_raw(speed: f64, heading: f64) -> Self {
        PolarAction {
            speed: speed.max(0.0),
            heading: wrap_angle(heading),
        }
    }
}

/// Full simulation setup: horizon, Red's action statistics, Blue's speed
/// budget, the safety-circle percentage, initial positions, and the
/// catch tolerance. Angles are radians internally; config files take
/// degrees (see [`GameConfig::from_config_text`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Total time steps; even and >= 2.
    pub t_total: u32,
    /// Mean of Red's stage-1 speed draw.
    pub v_mean_red: f64,
    /// Std dev of Red's stage-1 speed draw.
    pub v_std_red: f64,
    /// Mean of Red's stage-1 heading draw (radians).
    pub theta_mean_red: f64,
    /// Std dev of Red's stage-1 heading draw (radians).
    pub theta_std_red: f64,
    /// Upper bound on the sum of Blue's two stage speeds.
    pub v_cap: f64,
    /// Safety-circle radius as a percentage of Red's projected travel.
    pub safety_pct: f64,
    pub red_start: Point2,
    pub blue_start: Point2,
    /// End-point distances below this count as a catch.
    pub catch_eps: f64,
}

impl Default for GameConfig {
    /// The reference simulation setup: T=20, Red speed ~ N(5, 0.7),
    /// heading ~ N(60deg, 8deg), v_cap 12, safety 10%, Red at (10,50),
    /// Blue at (90,50).
    fn default() -> Self {
        GameConfig {
            t_total: 20,
            v_mean_red: 5.0,
            v_std_red: 0.7,
            theta_mean_red: 60f64.to_radians(),
            theta_std_red: 8f64.to_radians(),
            v_cap: 12.0,
            safety_pct: 10.0,
            red_start: Point2::new(10.0, 50.0),
            blue_start: Point2::new(90.0, 50.0),
            catch_eps: 1e-6,
        }
    }
}

impl GameConfig {
    /// Steps per stage.
    pub fn half(&self) -> u32 {
        self.t_total / 2
    }

    /// Check the config invariants.
    pub fn validate(&self) -> Result<()> {
        if self.t_total < 2 || self.t_total % 2 != 0 {
            return Err(Error::Config(format!(
                "t_total must be an even integer >= 2, got {}",
                self.t_total
            )));
        }
        if !(self.v_std_red >= 0.0) || !(self.theta_std_red >= 0.0) {
            return Err(Error::Config("standard deviations must be >= 0".into()));
        }
        if !(self.v_cap > 0.0) {
            return Err(Error::Config(format!("v_cap must be > 0, got {}", self.v_cap)));
        }
        if !(0.0..=100.0).contains(&self.safety_pct) {
            return Err(Error::Config(format!(
                "safety_pct must lie in [0,100], got {}",
                self.safety_pct
            )));
        }
        if !(self.catch_eps > 0.0) {
            return Err(Error::Config(format!(
                "catch_eps must be > 0, got {}",
                self.catch_eps
            )));
        }
        for (name, v) in [
            ("v_mean_red", self.v_mean_red),
            ("theta_mean_red", self.theta_mean_red),
            ("red_start.x", self.red_start.x),
            ("red_start.y", self.red_start.y),
            ("blue_start.x", self.blue_start.x),
            ("blue_start.y", self.blue_start.y),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Parse a flat `key=value` config file. Angles are given in degrees.
    /// Missing keys fall back to the reference setup; unknown keys are
    /// rejected. `#` starts a comment line.
    pub fn from_config_text(text: &str) -> Result<GameConfig> {
        let mut cfg = GameConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let fv = || parse_f64(value, key).map_err(|e| Error::Config(e.to_string()));
            match key {
                "t_total" => {
                    cfg.t_total = value
                        .parse::<u32>()
                        .map_err(|_| Error::Config(format!("bad t_total: {value:?}")))?;
                }
                "v_mean_red" => cfg.v_mean_red = fv()?,
                "v_std_red" => cfg.v_std_red = fv()?,
                "theta_mean_red" => cfg.theta_mean_red = fv()?.to_radians(),
                "theta_std_red" => cfg.theta_std_red = fv()?.to_radians(),
                "v_cap" => cfg.v_cap = fv()?,
                "safety_pct" => cfg.safety_pct = fv()?,
                "red_start_x" => cfg.red_start.x = fv()?,
                "red_start_y" => cfg.red_start.y = fv()?,
                "blue_start_x" => cfg.blue_start.x = fv()?,
                "blue_start_y" => cfg.blue_start.y = fv()?,
                "catch_eps" => cfg.catch_eps = fv()?,
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form (internal units), the basis of [`Self::digest`].
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("t_total={}\n", self.t_total));
        for (k, v) in [
            ("v_mean_red", self.v_mean_red),
            ("v_std_red", self.v_std_red),
            ("theta_mean_red_rad", self.theta_mean_red),
            ("theta_std_red_rad", self.theta_std_red),
            ("v_cap", self.v_cap),
            ("safety_pct", self.safety_pct),
            ("red_start_x", self.red_start.x),
            ("red_start_y", self.red_start.y),
            ("blue_start_x", self.blue_start.x),
            ("blue_start_y", self.blue_start.y),
            ("catch_eps", self.catch_eps),
        ] {
            s.push_str(&format!("{k}={}\n", fmt_f64(v)));
        }
        s
    }

    /// Hex digest identifying this configuration in provenance lines.
    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }
}

/// One simulated game instance: both agents' stage actions, Blue's
/// remaining speed budget after stage 1, the end-point distance, and the
/// terminal positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub r1: PolarAction,
    pub b1: PolarAction,
    pub r2: PolarAction,
    pub b2: PolarAction,
    /// `v_cap - b1.speed`: the budget left for Blue's stage-2 speed.
    pub v_cap_rem: f64,
    /// Euclidean distance between the two agents at the final step.
    pub d_rb: f64,
    /// Whether Blue's stage speeds sum above the cap.
    pub violated: bool,
    pub red_end: Point2,
    pub blue_end: Point2,
}

/// Position reached from `start` after holding action `a` for `steps`
/// time steps.
pub fn position_after(start: Point2, a: PolarAction, steps: u32) -> Point2 {
    let d = steps as f64 * a.speed;
    Point2 {
        x: start.x + d * a.heading.cos(),
        y: start.y + d * a.heading.sin(),
    }
}

/// Terminal position after holding `a1` for `half` steps and then `a2`
/// for another `half` steps.
pub fn endpoint(start: Point2, a1: PolarAction, a2: PolarAction, half: u32) -> Point2 {
    position_after(position_after(start, a1, half), a2, half)
}

/// Euclidean distance between the two agents' terminal positions — the
/// game's loss for Blue.
pub fn endpoint_distance(red_end: Point2, blue_end: Point2) -> f64 {
    red_end.distance(blue_end)
}

/// Where Red would end at t = t_total if it held its stage-1 action for
/// the whole game. This is the point Blue initially aims for.
pub fn project_destination(cfg: &GameConfig, r1: PolarAction) -> Point2 {
    position_after(cfg.red_start, r1, cfg.t_total)
}

/// The scripted data-generating pursuer's stage-1 action: head straight
/// for Red's projected destination at the uniform speed that arrives there
/// exactly at t = t_total. Returns (0, 0) if the destination coincides
/// with Blue's start.
pub fn scripted_blue_stage1(cfg: &GameConfig, r1: PolarAction) -> PolarAction {
    let dest = project_destination(cfg, r1);
    let dist = cfg.blue_start.distance(dest);
    if dist == 0.0 {
        return PolarAction::new(0.0, 0.0);
    }
    let heading = (dest.y - cfg.blue_start.y).atan2(dest.x - cfg.blue_start.x);
    PolarAction::new(dist / cfg.t_total as f64, heading)
}

/// Red's safety circle: centered at the projected destination with radius
/// `safety_pct`% of the distance Red would travel to reach it.
pub fn safety_circle(cfg: &GameConfig, r1: PolarAction) -> (Point2, f64) {
    let center = project_destination(cfg, r1);
    let radius = cfg.safety_pct / 100.0 * r1.speed * cfg.t_total as f64;
    (center, radius)
}

/// Red's evasion rule: from its mid-game position, move to the point of
/// the safety circle farthest from Blue's mid-game position.
///
/// Returns the stage-2 action and the destination itself. When Blue sits
/// exactly on the circle center every circle point is equally far; the
/// tie breaks by continuing along Red's stage-1 heading.
pub fn red_stage2(cfg: &GameConfig, r1: PolarAction, blue_mid: Point2) -> (PolarAction, Point2) {
    let (center, radius) = safety_circle(cfg, r1);
    let dx = center.x - blue_mid.x;
    let dy = center.y - blue_mid.y;
    let norm = (dx * dx + dy * dy).sqrt();
    let (ux, uy) = if norm == 0.0 {
        (r1.heading.cos(), r1.heading.sin())
    } else {
        (dx / norm, dy / norm)
    };
    let dest = Point2::new(center.x + radius * ux, center.y + radius * uy);
    debug_assert!((dest.distance(center) - radius).abs() < 1e-9);

    let half = cfg.half();
    let red_mid = position_after(cfg.red_start, r1, half);
    let dist = red_mid.distance(dest);
    let heading = if dist == 0.0 {
        r1.heading
    } else {
        (dest.y - red_mid.y).atan2(dest.x - red_mid.x)
    };
    (PolarAction::new(dist / half as f64, heading), dest)
}

/// The scripted pursuer's stage-2 action: head from its mid-game position
/// toward `dest2` at the speed that would arrive exactly at t = t_total,
/// capped by the remaining budget `v_cap - v1b`. When the cap binds Blue
/// falls short of `dest2`.
pub fn scripted_blue_stage2(
    cfg: &GameConfig,
    blue_mid: Point2,
    v1b: f64,
    dest2: Point2,
) -> PolarAction {
    debug_assert!(v1b >= 0.0);
    let dist = blue_mid.distance(dest2);
    if dist == 0.0 {
        return PolarAction::new(0.0, 0.0);
    }
    let heading = (dest2.y - blue_mid.y).atan2(dest2.x - blue_mid.x);
    let ideal = dist / cfg.half() as f64;
    let allowed = (cfg.v_cap - v1b).max(0.0);
    PolarAction::new(ideal.min(allowed), heading)
}

/// Draw Red's stage-1 action. Speeds are redrawn until positive (the
/// Gaussian tail below zero is physically meaningless); headings wrap
/// into (-pi, pi].
fn draw_red_stage1(cfg: &GameConfig, rng: &mut ChaCha8Rng) -> PolarAction {
    let speed = if cfg.v_std_red == 0.0 {
        cfg.v_mean_red
    } else {
        let dist = Normal::new(cfg.v_mean_red, cfg.v_std_red).expect("validated std");
        loop {
            let v = dist.sample(rng);
            if v > 0.0 {
                break v;
            }
        }
    };
    let heading = if cfg.theta_std_red == 0.0 {
        cfg.theta_mean_red
    } else {
        Normal::new(cfg.theta_mean_red, cfg.theta_std_red)
            .expect("validated std")
            .sample(rng)
    };
    PolarAction::new(speed, heading)
}

/// Simulate one full episode against the scripted pursuer.
///
/// Draws Red's opening action from the configured Gaussians, plays both
/// stages, and fills every [`EpisodeRecord`] field. Identical
/// (config, rng state) gives an identical record.
pub fn simulate_episode(cfg: &GameConfig, episode_id: u64, rng: &mut ChaCha8Rng) -> EpisodeRecord {
    let half = cfg.half();
    let r1 = draw_red_stage1(cfg, rng);
    let b1 = scripted_blue_stage1(cfg, r1);

    let red_mid = position_after(cfg.red_start, r1, half);
    let blue_mid = position_after(cfg.blue_start, b1, half);

    let (r2, dest2) = red_stage2(cfg, r1, blue_mid);
    let b2 = scripted_blue_stage2(cfg, blue_mid, b1.speed, dest2);

    let red_end = position_after(red_mid, r2, half);
    let blue_end = position_after(blue_mid, b2, half);
    let d_rb = endpoint_distance(red_end, blue_end);

    EpisodeRecord {
        episode_id,
        r1,
        b1,
        r2,
        b2,
        v_cap_rem: cfg.v_cap - b1.speed,
        d_rb,
        violated: b1.speed + b2.speed > cfg.v_cap,
        red_end,
        blue_end,
    }
}

impl EpisodeRecord {
    /// Check the record's internal consistency against a config.
    pub fn validate(&self, cfg: &GameConfig) -> Result<()> {
        if (self.v_cap_rem - (cfg.v_cap - self.b1.speed)).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "episode {}: v_cap_rem {} != v_cap - b1.speed {}",
                self.episode_id,
                self.v_cap_rem,
                cfg.v_cap - self.b1.speed
            )));
        }
        if !(self.d_rb >= 0.0) {
            return Err(Error::Invalid(format!(
                "episode {}: negative d_rb {}",
                self.episode_id, self.d_rb
            )));
        }
        let recomputed = endpoint_distance(self.red_end, self.blue_end);
        if (recomputed - self.d_rb).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "episode {}: d_rb {} does not match endpoints ({})",
                self.episode_id, self.d_rb, recomputed
            )));
        }
        Ok(())
    }
}
