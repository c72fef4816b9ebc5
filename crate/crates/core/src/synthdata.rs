//! Seeded synthetic activities with known latent pose.
//!
//! Every sequence traverses a shared cycle in latent space, `z(u) = r(u)
//! (cos θ(u), sin θ(u), …)` with `θ(u) = θ₀ + 2π·cycles·u`, at a jittered
//! speed. Observations are `x = A_s g(z) + b_s + ε` where `g` is a random
//! sinusoidal feature map shared by all sequences and `(A_s, b_s)` is a
//! per-sequence appearance map.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::base::{Dataset, Sequence};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Rank of the subspace the per-sequence offsets live in.
const APPEARANCE_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_sequences: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub latent_dim: usize,
    pub min_cycles: f64,
    pub max_cycles: f64,
    pub feature_dim: usize,
    /// Scale of the per-sequence affine appearance map.
    pub nuisance: f64,
    /// Standard deviation of the additive observation noise.
    pub noise: f64,
    /// Per-frame speed varies uniformly in `[1 − j, 1 + j]`.
    pub speed_jitter: f64,
    /// Relative change of the cycle radius over a sequence.
    pub drift: f64,
    /// Spread of the random frequencies of the feature map.
    pub frequency: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_sequences: 12,
            min_frames: 140,
            max_frames: 160,
            latent_dim: 2,
            min_cycles: 2.0,
            max_cycles: 3.0,
            feature_dim: 64,
            nuisance: 1.0,
            noise: 0.05,
            speed_jitter: 0.3,
            drift: 0.3,
            frequency: 1.5,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.num_sequences < 2 {
            return bad("num_sequences must be >= 2");
        }
        if self.min_frames < 2 || self.min_frames > self.max_frames {
            return bad("need 2 <= min_frames <= max_frames");
        }
        if self.latent_dim < 2 {
            return bad("latent_dim must be >= 2");
        }
        if self.feature_dim <= self.latent_dim {
            return bad("feature_dim must exceed latent_dim");
        }
        if !(self.min_cycles > 0.0) || !(self.min_cycles <= self.max_cycles) || !self.max_cycles.is_finite() {
            return bad("need 0 < min_cycles <= max_cycles");
        }
        for (name, v) in [("nuisance", self.nuisance), ("noise", self.noise), ("drift", self.drift), ("frequency", self.frequency)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..1.0).contains(&self.speed_jitter) {
            return bad("speed_jitter must lie in [0, 1)");
        }
        if self.drift >= 2.0 {
            return bad("drift must be < 2");
        }
        Ok(())
    }

    /// Upper bound on `‖z_{t+1} − z_t‖` for any generated frame pair.
    pub fn continuity_bound(&self) -> f64 {
        let step = (1.0 + self.speed_jitter) / ((self.min_frames - 1) as f64 * (1.0 - self.speed_jitter));
        let r_max = 1.0 + self.drift / 2.0;
        let extra = (self.latent_dim - 2) as f64;
        let speed = (self.drift * self.drift + (2.0 * PI * self.max_cycles * r_max).powi(2) + extra * (PI * self.drift).powi(2)).sqrt();
        step * speed
    }
}

/// The shared feature map `g(z) = sin(W z + φ)`.
#[derive(Clone, Debug)]
struct World {
    freqs: Array2<f64>,
    phases: Array1<f64>,
    appearance: Array2<f64>,
}

impl World {
    fn new(cfg: &GeneratorConfig) -> Self {
        let mut rng = RngState::new(cfg.seed).fork(0);
        let f = cfg.feature_dim;
        let freqs = Array2::from_shape_fn((f, cfg.latent_dim), |_| cfg.frequency * rng.normal());
        let phases = Array1::from_shape_fn(f, |_| rng.uniform_range(0.0, 2.0 * PI));
        let appearance = Array2::from_shape_fn((f, APPEARANCE_RANK), |_| rng.normal() / (APPEARANCE_RANK as f64).sqrt());
        Self { freqs, phases, appearance }
    }

    fn features(&self, z: &[f64]) -> Array1<f64> {
        let z = ndarray::ArrayView1::from(z);
        (self.freqs.dot(&z) + &self.phases).mapv(f64::sin)
    }
}

/// Shape of one latent trajectory as a function of progress `u ∈ [0, 1]`.
#[derive(Clone, Debug)]
struct Trajectory {
    phase0: f64,
    cycles: f64,
    drift_sign: f64,
    extra_phases: Vec<f64>,
}

impl Trajectory {
    fn draw(cfg: &GeneratorConfig, rng: &mut RngState) -> Self {
        Self {
            phase0: rng.uniform_range(0.0, 2.0 * PI),
            cycles: if cfg.max_cycles > cfg.min_cycles {
                rng.uniform_range(cfg.min_cycles, cfg.max_cycles)
            } else {
                cfg.min_cycles
            },
            drift_sign: if rng.uniform() < 0.5 { -1.0 } else { 1.0 },
            extra_phases: (2..cfg.latent_dim).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect(),
        }
    }

    fn at(&self, cfg: &GeneratorConfig, u: f64) -> Vec<f64> {
        let r = 1.0 + cfg.drift * self.drift_sign * (u - 0.5);
        let theta = self.phase0 + 2.0 * PI * self.cycles * u;
        let mut z = vec![r * theta.cos(), r * theta.sin()];
        z.extend(self.extra_phases.iter().map(|p| cfg.drift * (PI * u + p).sin()));
        z
    }
}

/// Monotone progress values in `[0, 1]` with jittered spacing.
fn schedule(n: usize, jitter: f64, rng: &mut RngState) -> Vec<f64> {
    let speeds: Vec<f64> = (1..n).map(|_| 1.0 + jitter * rng.uniform_range(-1.0, 1.0)).collect();
    let total: f64 = speeds.iter().sum();
    let mut u = Vec::with_capacity(n);
    let mut acc = 0.0;
    u.push(0.0);
    for s in &speeds {
        acc += s;
        u.push((acc / total).min(1.0));
    }
    u
}

/// Per-sequence appearance map `(A_s, b_s)`.
#[derive(Clone, Debug)]
struct Appearance {
    gain: Array2<f64>,
    offset: Array1<f64>,
}

impl Appearance {
    fn draw(cfg: &GeneratorConfig, world: &World, rng: &mut RngState) -> Self {
        let f = cfg.feature_dim;
        let scale = 0.3 * cfg.nuisance / (f as f64).sqrt();
        let gain = Array2::from_shape_fn((f, f), |(i, j)| if i == j { 1.0 } else { 0.0 } + scale * rng.normal());
        let coeff = Array1::from_shape_fn(APPEARANCE_RANK, |_| rng.normal());
        let offset = world.appearance.dot(&coeff) * cfg.nuisance;
        Self { gain, offset }
    }
}

fn render(
    cfg: &GeneratorConfig,
    world: &World,
    traj: &Trajectory,
    app: &Appearance,
    progress: &[f64],
    rng: &mut RngState,
) -> (Array2<f64>, Array2<f64>) {
    let n = progress.len();
    let mut frames = Array2::zeros((n, cfg.feature_dim));
    let mut latent = Array2::zeros((n, cfg.latent_dim));
    for (t, &u) in progress.iter().enumerate() {
        let z = traj.at(cfg, u);
        let x = app.gain.dot(&world.features(&z)) + &app.offset;
        latent.row_mut(t).assign(&ndarray::ArrayView1::from(&z[..]));
        for (dst, v) in frames.row_mut(t).iter_mut().zip(x.iter()) {
            *dst = v + cfg.noise * rng.normal();
        }
    }
    (frames, latent)
}

/// Generates a dataset with latent ground truth. Sequence `s` draws all of
/// its randomness from its own stream, so the result does not depend on the
/// order sequences are produced in.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = World::new(cfg);
    let root = RngState::new(cfg.seed);
    let sequences = crate::par::map_range(cfg.num_sequences, |s| {
        let mut rng = root.fork(1 + s as u64);
        let n = cfg.min_frames + rng.index(cfg.max_frames - cfg.min_frames + 1);
        let traj = Trajectory::draw(cfg, &mut rng);
        let app = Appearance::draw(cfg, &world, &mut rng);
        let u = schedule(n, cfg.speed_jitter, &mut rng);
        let (frames, latent) = render(cfg, &world, &traj, &app, &u, &mut rng);
        Sequence::new(format!("seq{s:03}"), frames, Some(latent))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.feature_dim, sequences)
}

/// Two renderings of one latent trajectory with independent appearance and
/// timing; both have the same length, drawn from the configured range.
pub fn resample_pair(cfg: &GeneratorConfig, seed: u64) -> Result<(Sequence, Sequence, Vec<usize>)> {
    cfg.validate()?;
    let mut rng = RngState::new(seed).fork(0);
    let n = cfg.min_frames + rng.index(cfg.max_frames - cfg.min_frames + 1);
    resample_pair_with_lengths(cfg, seed, n, n)
}

/// As [`resample_pair`] with explicit lengths. The returned matching is
/// 1-based: frame `j` of the first rendering corresponds to frame
/// `pi[j] − 1` of the second, the one closest in progress along the shared
/// trajectory.
pub fn resample_pair_with_lengths(
    cfg: &GeneratorConfig,
    seed: u64,
    query_len: usize,
    target_len: usize,
) -> Result<(Sequence, Sequence, Vec<usize>)> {
    cfg.validate()?;
    if query_len < 2 || target_len < 2 {
        return Err(Error::config("renderings need at least two frames"));
    }
    let world = World::new(cfg);
    let root = RngState::new(seed);
    let traj = Trajectory::draw(cfg, &mut root.fork(1));
    let mut ra = root.fork(2);
    let mut rb = root.fork(3);
    let (ua, ub) = (schedule(query_len, cfg.speed_jitter, &mut ra), schedule(target_len, cfg.speed_jitter, &mut rb));
    let (app_a, app_b) = (Appearance::draw(cfg, &world, &mut ra), Appearance::draw(cfg, &world, &mut rb));
    let (fa, la) = render(cfg, &world, &traj, &app_a, &ua, &mut ra);
    let (fb, lb) = render(cfg, &world, &traj, &app_b, &ub, &mut rb);

    let mut pi = Vec::with_capacity(query_len);
    let mut i = 0;
    for &u in &ua {
        while i + 1 < ub.len() && (ub[i + 1] - u).abs() < (ub[i] - u).abs() {
            i += 1;
        }
        pi.push(i + 1);
    }
    Ok((Sequence::new(format!("pair{seed}a"), fa, Some(la))?, Sequence::new(format!("pair{seed}b"), fb, Some(lb))?, pi))
}
