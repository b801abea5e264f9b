//! Synthetic trace generation: a continuous-time Markov chain over
//! {g, e, f} drives the resonator's linear response, sampled with
//! calibrated Gaussian noise.
//!
//! Randomness contract: every trace is generated from a counter-based
//! generator `stream_rng(seed, stream)` so that (params, pointer, spec)
//! maps to a bit-identical trace.  Stream assignment:
//!
//! * stream 0 ([`STREAM_MARKOV`]): initial-state draw, holding times and
//!   branching choices of the jump path (also the sub-sample jump offset
//!   used by scripted benchmark paths);
//! * stream 1 ([`STREAM_NOISE`]): per-sample measurement noise.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{IQTrace, PointerModel, StateLabel, SystemParams, TruthSegment};

pub const STREAM_MARKOV: u64 = 0;
pub const STREAM_NOISE: u64 = 1;

/// Counter-based generator for the given seed and stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal pair via the Box-Muller transform.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
    let (sin_t, cos_t) = (TAU * u2).sin_cos();
    (radius * cos_t, radius * sin_t)
}

/// Exponential holding time with the given total rate.
fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Fixed(StateLabel),
    /// Sample the initial state from the chain's stationary distribution.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Unit-variance circular noise for every state.
    Isotropic,
    /// Per-state noise ellipses taken from the pointer model.
    Squeezed,
}

/// What to simulate: duration, seed, initial occupancy and noise shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub seed: u64,
    pub initial_state: InitialState,
    pub noise: NoiseMode,
}

/// Stationary distribution of the chain; uniform when every rate vanishes.
pub fn stationary_distribution(params: &SystemParams) -> [f64; 3] {
    let rates = &params.rates;
    // Solve pi Q = 0 with sum(pi) = 1 by Gaussian elimination on
    // [Q^T with one row replaced by ones].
    let mut a = [[0.0_f64; 3]; 3];
    for from in StateLabel::ALL {
        for to in StateLabel::ALL {
            if from == to {
                a[to.index()][from.index()] = -rates.total_exit(from);
            } else {
                a[to.index()][from.index()] = rates.get(from, to);
            }
        }
    }
    let mut b = [0.0_f64; 3];
    a[2] = [1.0, 1.0, 1.0];
    b[2] = 1.0;

    // 3x3 elimination with partial pivoting
    let mut rows = [0usize, 1, 2];
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| {
                a[rows[i]][col]
                    .abs()
                    .total_cmp(&a[rows[j]][col].abs())
            })
            .unwrap();
        rows.swap(col, pivot);
        if a[rows[col]][col].abs() < 1e-300 {
            return [1.0 / 3.0; 3];
        }
        for r in (col + 1)..3 {
            let factor = a[rows[r]][col] / a[rows[col]][col];
            #[allow(clippy::needless_range_loop)] // two rows of one array
            for c in col..3 {
                a[rows[r]][c] -= factor * a[rows[col]][c];
            }
            b[rows[r]] -= factor * b[rows[col]];
        }
    }
    let mut pi = [0.0_f64; 3];
    for col in (0..3).rev() {
        let mut acc = b[rows[col]];
        for c in (col + 1)..3 {
            acc -= a[rows[col]][c] * pi[c];
        }
        pi[col] = acc / a[rows[col]][col];
    }
    let mut total = 0.0;
    for p in &mut pi {
        *p = p.max(0.0);
        total += *p;
    }
    if total <= 0.0 {
        return [1.0 / 3.0; 3];
    }
    pi.map(|p| p / total)
}

/// Samples a continuous-time jump path over `[0, spec.duration]`:
/// exponential holding times with the state's total exit rate, next state
/// chosen proportional to the individual rates.  A state with zero exit
/// rate absorbs the path for the remaining duration.
pub fn sample_markov_path(params: &SystemParams, spec: &TrajectorySpec) -> Vec<TruthSegment> {
    let mut rng = stream_rng(spec.seed, STREAM_MARKOV);
    let mut state = match spec.initial_state {
        InitialState::Fixed(s) => s,
        InitialState::Stationary => {
            let pi = stationary_distribution(params);
            let draw: f64 = rng.random();
            if draw < pi[0] {
                StateLabel::G
            } else if draw < pi[0] + pi[1] {
                StateLabel::E
            } else {
                StateLabel::F
            }
        }
    };

    let mut segments = vec![TruthSegment { start: 0.0, state }];
    let mut t = 0.0;
    loop {
        let exit_rate = params.rates.total_exit(state);
        if exit_rate <= 0.0 {
            break;
        }
        t += exponential(&mut rng, exit_rate);
        if t >= spec.duration {
            break;
        }
        let mut pick = rng.random::<f64>() * exit_rate;
        let mut next = None;
        for to in StateLabel::ALL {
            let rate = params.rates.get(state, to);
            if to == state || rate <= 0.0 {
                continue;
            }
            next = Some(to);
            pick -= rate;
            if pick <= 0.0 {
                break;
            }
        }
        // rounding can leave pick marginally positive after the walk, in
        // which case the remainder belongs to the last positive branch
        let Some(next) = next else { break };
        state = next;
        segments.push(TruthSegment { start: t, state });
    }
    segments
}

/// One linear-response macro step of length `dt`: relaxation toward the
/// steady state `target` at rate `kappa / 2` while rotating at `detuning`,
/// `alpha' = target + (alpha - target) * exp((-kappa/2 + i*detuning) * dt)`.
pub fn pointer_step(
    alpha: Complex64,
    target: Complex64,
    kappa: f64,
    detuning: f64,
    dt: f64,
) -> Complex64 {
    let exponent = Complex64::new(-0.5 * kappa * dt, detuning * dt);
    target + (alpha - target) * exponent.exp()
}

/// Noiseless mean trajectory sampled at the trace clock: the pointer starts
/// on the initial segment's steady state and relaxes piecewise through every
/// jump, continuous across state changes.
pub fn mean_trajectory(
    params: &SystemParams,
    pointer: &PointerModel,
    path: &[TruthSegment],
    n_samples: usize,
) -> Vec<Complex64> {
    let tau = params.tau;
    let mut alpha = pointer.alpha[path[0].state];
    let mut seg = 0usize;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t_end = (k + 1) as f64 * tau;
        while seg + 1 < path.len() && path[seg + 1].start < t_end {
            let boundary = path[seg + 1].start;
            if boundary > t {
                let state = path[seg].state;
                alpha = pointer_step(
                    alpha,
                    pointer.alpha[state],
                    params.kappa,
                    pointer.detuning[state],
                    boundary - t,
                );
                t = boundary;
            }
            seg += 1;
        }
        let state = path[seg].state;
        alpha = pointer_step(
            alpha,
            pointer.alpha[state],
            params.kappa,
            pointer.detuning[state],
            t_end - t,
        );
        t = t_end;
        out.push(alpha);
    }
    out
}

/// Renders a jump path into a noisy IQ trace with truth annotations.
pub fn render_trace(
    params: &SystemParams,
    pointer: &PointerModel,
    path: &[TruthSegment],
    spec: &TrajectorySpec,
) -> Result<IQTrace> {
    if path.is_empty() {
        return Err(Error::Domain("jump path has no segments".into()));
    }
    if path[0].start != 0.0 {
        return Err(Error::Domain(format!(
            "jump path must start at t = 0, got {}",
            path[0].start
        )));
    }
    let n_samples = (spec.duration / params.tau).floor() as usize;
    if n_samples < 10 {
        return Err(Error::Domain(format!(
            "duration {} must cover at least 10 samples of tau = {}",
            spec.duration, params.tau
        )));
    }

    let mean = mean_trajectory(params, pointer, path, n_samples);
    let mut noise_rng = stream_rng(spec.seed, STREAM_NOISE);
    let duration = n_samples as f64 * params.tau;

    let mut samples = Vec::with_capacity(n_samples);
    let mut seg = 0usize;
    for (k, &alpha) in mean.iter().enumerate() {
        let t_end = (k + 1) as f64 * params.tau;
        while seg + 1 < path.len() && path[seg + 1].start < t_end {
            seg += 1;
        }
        let state = path[seg].state;
        let (z1, z2) = normal_pair(&mut noise_rng);
        let noise = match spec.noise {
            NoiseMode::Isotropic => Complex64::new(z1, z2),
            NoiseMode::Squeezed => {
                let ellipse = &pointer.sigma[state];
                let (sin_t, cos_t) = ellipse.tilt.sin_cos();
                let x = ellipse.sigma_major * z1;
                let y = ellipse.sigma_minor * z2;
                Complex64::new(x * cos_t - y * sin_t, x * sin_t + y * cos_t)
            }
        };
        samples.push(alpha + noise);
    }

    let truth: Vec<TruthSegment> = path
        .iter()
        .filter(|segment| segment.start < duration)
        .copied()
        .collect();

    let trace = IQTrace {
        dt: params.tau,
        nbar: params.nbar,
        samples,
        truth: Some(truth),
    };
    trace.validate()?;
    Ok(trace)
}

/// Samples a jump path and renders it; deterministic per seed.
pub fn simulate(
    params: &SystemParams,
    pointer: &PointerModel,
    spec: &TrajectorySpec,
) -> Result<IQTrace> {
    let path = sample_markov_path(params, spec);
    render_trace(params, pointer, &path, spec)
}
