//! Closed-loop simulation with noisy landmark measurements and Monte Carlo
//! audits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::ConvexCell;
use crate::landmarks::{sample_measurement, Landmark};
use crate::safety::LinearSystem;
use crate::synthesis::{compute_control, OutputFeedbackController, SynthesisProblem};
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Time step in seconds.
    pub dt: f64,
    /// Horizon in seconds.
    pub max_time: f64,
    pub seed: u64,
    pub trials: usize,
    /// Distance before the exit face at which the exit counts as reached.
    pub exit_margin: f64,
    /// Use exact displacements instead of sampled measurements.
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_time: 60.0,
            seed: 0,
            trials: 100,
            exit_margin: 0.0,
            noiseless: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.max_time >= self.dt && self.max_time.is_finite()) {
            return Err(Error::Config(format!(
                "max_time {} must be at least dt {}",
                self.max_time, self.dt
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.exit_margin >= 0.0 && self.exit_margin.is_finite()) {
            return Err(Error::Config(format!("exit_margin must be nonnegative, got {}", self.exit_margin)));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.max_time / self.dt - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub exit_time: Option<f64>,
    pub collided: bool,
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloStats {
    pub trials: usize,
    pub collisions: usize,
    pub exits: usize,
    pub timeouts: usize,
    pub violation_rate: f64,
    /// Binomial standard error of `violation_rate`.
    pub violation_stderr: f64,
    pub mean_exit_time: Option<f64>,
    pub std_exit_time: Option<f64>,
    pub median_exit_time: Option<f64>,
    pub mean_jitter: f64,
    pub median_jitter: f64,
}

/// Everything an episode needs besides the run configuration.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub cell: &'a ConvexCell,
    /// Face whose crossing ends the episode successfully; the other faces
    /// are walls.
    pub exit_face: Option<usize>,
    pub system: &'a LinearSystem,
    pub controller: &'a OutputFeedbackController,
    pub landmarks: &'a [Landmark],
    pub start: &'a Vector,
}

/// One explicit Euler step; returns the next state and the applied input.
pub fn step(
    x: &Vector,
    system: &LinearSystem,
    controller: &OutputFeedbackController,
    measurements: &[Vector],
    dt: f64,
) -> Result<(Vector, Vector)> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let u = compute_control(controller, measurements)?;
    let next = x + system.derivative(x, &u) * dt;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            step: 0,
            state: format!("{:?}", next.as_slice()),
        });
    }
    Ok((next, u))
}

/// Seed of trial `index` derived from `master` (splitmix64 finalizer).
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn measurements(landmarks: &[Landmark], x: &Vector, noiseless: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Vector>> {
    landmarks
        .iter()
        .map(|l| {
            if noiseless {
                Ok(&l.position - x)
            } else {
                sample_measurement(l, x, rng)
            }
        })
        .collect()
}

/// First parameter in `[0, 1]` at which the segment `x0 -> x1` makes
/// `f(x) = a.x + b` exceed `level`, if any.
fn crossing(value0: f64, value1: f64, level: f64) -> Option<f64> {
    if value1 <= level {
        return None;
    }
    if value0 >= level {
        return Some(0.0);
    }
    Some((level - value0) / (value1 - value0))
}

/// Simulates until the exit face is crossed, a wall is crossed, or the
/// horizon ends. Deterministic in `seed`.
pub fn run_episode(setup: &Setup, config: &SimConfig, seed: u64) -> Result<TrajectoryRecord> {
    config.validate()?;
    let cell = setup.cell;
    check_dim("start state", setup.system.state_dim(), setup.start.len())?;
    check_dim("cell dimension", setup.system.state_dim(), cell.dim())?;
    setup.controller.check_landmarks(setup.landmarks)?;
    if !cell.contains(setup.start)? {
        return Err(Error::Domain("start state lies outside the cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = setup.start.clone();
    let mut states = vec![x.iter().copied().collect::<Vec<_>>()];
    let mut inputs = Vec::new();
    let mut exit_time = None;
    let mut collided = false;
    for k in 0..config.steps() {
        let ys = measurements(setup.landmarks, &x, config.noiseless, &mut rng)?;
        let (next, u) = step(&x, setup.system, setup.controller, &ys, config.dt).map_err(|e| match e {
            Error::NonFiniteState { state, .. } => Error::NonFiniteState { step: k, state },
            other => other,
        })?;
        let mut first_wall: Option<f64> = None;
        let mut exit_at: Option<f64> = None;
        for f in 0..cell.num_faces() {
            let face = cell.face(f);
            let (v0, v1) = (face.value(&x), face.value(&next));
            if Some(f) == setup.exit_face {
                exit_at = crossing(v0, v1, -config.exit_margin);
            } else if let Some(s) = crossing(v0, v1, 0.0) {
                first_wall = Some(first_wall.map_or(s, |w: f64| w.min(s)));
            }
        }
        inputs.push(u.iter().copied().collect());
        states.push(next.iter().copied().collect());
        x = next;
        match (first_wall, exit_at) {
            (Some(w), Some(e)) if e <= w => {
                exit_time = Some((k as f64 + e) * config.dt);
                break;
            }
            (Some(_), _) => {
                collided = true;
                break;
            }
            (None, Some(e)) => {
                exit_time = Some((k as f64 + e) * config.dt);
                break;
            }
            (None, None) => {}
        }
    }
    let mut record = TrajectoryRecord {
        dt: config.dt,
        states,
        inputs,
        exit_time,
        collided,
        jitter: 0.0,
        seed,
    };
    record.jitter = if record.inputs.len() >= 2 { jitter_metric(&record)? } else { 0.0 };
    Ok(record)
}

/// Runs `config.trials` episodes in parallel with per-trial derived seeds.
/// Records come back in trial order.
pub fn run_trials(setup: &Setup, config: &SimConfig) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    (0..config.trials as u64)
        .into_par_iter()
        .map(|i| run_episode(setup, config, trial_seed(config.seed, i)))
        .collect()
}

pub fn monte_carlo(setup: &Setup, config: &SimConfig) -> Result<MonteCarloStats> {
    Ok(summarize(&run_trials(setup, config)?))
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Aggregates records; exit-time statistics use exited trials only.
pub fn summarize(records: &[TrajectoryRecord]) -> MonteCarloStats {
    let trials = records.len();
    let collisions = records.iter().filter(|r| r.collided).count();
    let mut exits: Vec<f64> = records.iter().filter_map(|r| r.exit_time).collect();
    let p = if trials > 0 { collisions as f64 / trials as f64 } else { 0.0 };
    let mean_exit = (!exits.is_empty()).then(|| exits.iter().sum::<f64>() / exits.len() as f64);
    let std_exit = mean_exit.map(|m| {
        if exits.len() < 2 {
            0.0
        } else {
            (exits.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (exits.len() - 1) as f64).sqrt()
        }
    });
    let mut jitters: Vec<f64> = records.iter().map(|r| r.jitter).collect();
    let mean_jitter = if trials > 0 { jitters.iter().sum::<f64>() / trials as f64 } else { 0.0 };
    MonteCarloStats {
        trials,
        collisions,
        exits: exits.len(),
        timeouts: trials - collisions - exits.len(),
        violation_rate: p,
        violation_stderr: if trials > 0 { (p * (1.0 - p) / trials as f64).sqrt() } else { 0.0 },
        mean_exit_time: mean_exit,
        std_exit_time: std_exit,
        median_exit_time: median(&mut exits),
        mean_jitter,
        median_jitter: median(&mut jitters).unwrap_or(0.0),
    }
}

/// Mean squared input increment over mean squared input; zero when every
/// input is zero.
pub fn jitter_metric(record: &TrajectoryRecord) -> Result<f64> {
    let u = &record.inputs;
    if u.len() < 2 {
        return Err(Error::Domain(format!("jitter needs at least two inputs, got {}", u.len())));
    }
    let sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
    let energy = u.iter().map(|x| sq(x)).sum::<f64>() / u.len() as f64;
    if energy == 0.0 {
        return Ok(0.0);
    }
    let incr = u
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
        .sum::<f64>()
        / (u.len() - 1) as f64;
    Ok(incr / energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub state: Vec<f64>,
    pub constraint: String,
    /// Fraction of sampled steps on which the condition failed.
    pub violation_rate: f64,
    pub binomial_sigma: f64,
}

/// Per-step chance audit: at each state, samples `trials` measurement sets
/// and counts how often each of the problem's conditions fails under
/// `controller`.
pub fn chance_audit(
    problem: &SynthesisProblem,
    controller: &OutputFeedbackController,
    states: &[Vector],
    trials: usize,
    seed: u64,
) -> Result<Vec<AuditEntry>> {
    if trials == 0 {
        return Err(Error::Domain("at least one trial is required".into()));
    }
    controller.check_landmarks(&problem.landmarks)?;
    let forms = problem.forms()?;
    let per_state: Vec<Vec<AuditEntry>> = states
        .par_iter()
        .enumerate()
        .map(|(s, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, s as u64));
            let mut fails = vec![0usize; forms.len()];
            for _ in 0..trials {
                let ys = measurements(&problem.landmarks, x, false, &mut rng)?;
                let u = compute_control(controller, &ys)?;
                for (c, f) in forms.iter().enumerate() {
                    if f.form.evaluate(x, &u) < 0.0 {
                        fails[c] += 1;
                    }
                }
            }
            Ok(forms
                .iter()
                .zip(fails)
                .map(|(f, k)| {
                    let p = k as f64 / trials as f64;
                    AuditEntry {
                        state: x.iter().copied().collect(),
                        constraint: f.name.clone(),
                        violation_rate: p,
                        binomial_sigma: (p * (1.0 - p) / trials as f64).sqrt(),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_state.into_iter().flatten().collect())
}
