//! Domain types and parameter derivations shared by the simulator, the
//! filters and the analysis code.
//!
//! Unit conventions used throughout the crate:
//!
//! * times are seconds, rates are 1/s, angular frequencies are rad/s;
//! * IQ samples are expressed in units of the square root of measurement
//!   photons, `sqrt(nbar * B_inv * kappa / 4)`.  In these units the
//!   per-quadrature measurement noise has unit variance (isotropic default)
//!   and the steady-state pointer amplitude is
//!   `|alpha| = sqrt(kappa * B_inv * eta * nbar / 2)`, so the steady-state
//!   signal-to-noise ratio `|alpha| / sqrt(sigma_i^2 + sigma_q^2)` equals
//!   `sqrt(kappa * B_inv * eta * nbar / 4)` by construction;
//! * phases live in the half-open interval `(-pi, pi]` and phase
//!   differences are always taken on the circle, never by raw subtraction.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;

use crate::config::Config;
use crate::error::{Error, Result};

/// The three monitored states, ordered `G < E < F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateLabel {
    G,
    E,
    F,
}

impl StateLabel {
    pub const ALL: [StateLabel; 3] = [StateLabel::G, StateLabel::E, StateLabel::F];

    pub fn index(self) -> usize {
        match self {
            StateLabel::G => 0,
            StateLabel::E => 1,
            StateLabel::F => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<StateLabel> {
        match index {
            0 => Some(StateLabel::G),
            1 => Some(StateLabel::E),
            2 => Some(StateLabel::F),
            _ => None,
        }
    }

    /// Lower-case letter used in config keys, CSV cells and trace files.
    pub fn letter(self) -> char {
        match self {
            StateLabel::G => 'g',
            StateLabel::E => 'e',
            StateLabel::F => 'f',
        }
    }

    pub fn parse(text: &str) -> Option<StateLabel> {
        match text {
            "g" | "G" => Some(StateLabel::G),
            "e" | "E" => Some(StateLabel::E),
            "f" | "F" => Some(StateLabel::F),
            _ => None,
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A value per state, indexable by [`StateLabel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMap<T>(pub [T; 3]);

impl<T> StateMap<T> {
    pub fn from_fn(mut f: impl FnMut(StateLabel) -> T) -> Self {
        StateMap([f(StateLabel::G), f(StateLabel::E), f(StateLabel::F)])
    }

    pub fn map<U>(&self, mut f: impl FnMut(StateLabel, &T) -> U) -> StateMap<U> {
        StateMap::from_fn(|h| f(h, &self[h]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateLabel, &T)> {
        StateLabel::ALL.iter().map(move |&h| (h, &self[h]))
    }
}

impl<T: Copy> StateMap<T> {
    pub fn splat(value: T) -> Self {
        StateMap([value; 3])
    }
}

impl<T> std::ops::Index<StateLabel> for StateMap<T> {
    type Output = T;
    fn index(&self, h: StateLabel) -> &T {
        &self.0[h.index()]
    }
}

impl<T> std::ops::IndexMut<StateLabel> for StateMap<T> {
    fn index_mut(&mut self, h: StateLabel) -> &mut T {
        &mut self.0[h.index()]
    }
}

/// Off-diagonal transition-rate matrix in 1/s; the diagonal is identically
/// zero and not settable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates([[f64; 3]; 3]);

impl Rates {
    pub fn zero() -> Self {
        Rates([[0.0; 3]; 3])
    }

    pub fn get(&self, from: StateLabel, to: StateLabel) -> f64 {
        self.0[from.index()][to.index()]
    }

    /// Sets the `from -> to` rate.  Panics if `from == to`; validity of the
    /// rate value itself is checked by [`SystemParams::new`].
    pub fn set(&mut self, from: StateLabel, to: StateLabel, rate: f64) {
        assert!(from != to, "diagonal rate {from}->{to} is not settable");
        self.0[from.index()][to.index()] = rate;
    }

    /// Total exit rate out of `from`.
    pub fn total_exit(&self, from: StateLabel) -> f64 {
        self.0[from.index()].iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateLabel, StateLabel, f64)> + '_ {
        StateLabel::ALL.into_iter().flat_map(move |from| {
            StateLabel::ALL
                .into_iter()
                .filter(move |&to| to != from)
                .map(move |to| (from, to, self.get(from, to)))
        })
    }
}

/// Wraps an angle to the convention interval `(-pi, pi]`; values already in
/// range pass through unchanged.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(TAU) - PI;
    if wrapped == -PI { PI } else { wrapped }
}

/// Signed angular difference `a - b` on the circle, in `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Resonator response time `tau_b = 2 / kappa`.
pub fn response_time(kappa: f64) -> f64 {
    2.0 / kappa
}

/// Effective measurement bandwidth `B_inv = tau + tau_b`.
pub fn bandwidth_inv(kappa: f64, tau: f64) -> f64 {
    tau + response_time(kappa)
}

/// Reference window over which the default excitation/leakage rates are
/// calibrated (the same window used for the repeated-measurement fidelity).
pub const QND_REFERENCE_WINDOW: f64 = 432e-9;
/// Default per-window e -> f leakage probability (1.2 %).
pub const DEFAULT_LEAK_EF_PROB: f64 = 0.012;
/// Default per-window g -> e excitation probability (0.3 %).
pub const DEFAULT_EXCITE_GE_PROB: f64 = 0.003;
/// Default steady-state pointer phases (g, e, f) in radians.
pub const DEFAULT_PHI: [f64; 3] = [-1.3, 1.3, -2.4];
/// Default dispersive shift `chi_ge` in rad/s (informational).
pub const DEFAULT_CHI_GE: f64 = -2.0 * PI * 1.09e6;

/// Converts a transition probability over `window` seconds into a rate,
/// `rate = -ln(1 - p) / window`.
pub fn prob_to_rate(prob: f64, window: f64) -> f64 {
    -(1.0 - prob).ln() / window
}

/// All physical and calibration constants of a run, in explicit units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Resonator coupling rate, rad/s.
    pub kappa: f64,
    /// Mean circulating photon number.
    pub nbar: f64,
    /// Measurement efficiency, in (0, 1].
    pub eta: f64,
    /// Integration time per sample, s.
    pub tau: f64,
    /// Response time `2 / kappa`, s (derived).
    pub tau_b: f64,
    /// Measurement bandwidth `tau + tau_b`, s (derived).
    pub bandwidth_inv: f64,
    /// Energy relaxation time of e -> g, s.
    pub t1: f64,
    /// Off-diagonal transition rates, 1/s.
    pub rates: Rates,
    /// Steady-state pointer phase per state, rad, in `(-pi, pi]`.
    pub phi: StateMap<f64>,
    /// Dispersive shift, rad/s.  Informational; not used by the filters.
    pub chi_ge: f64,
}

impl SystemParams {
    /// Validates the raw constants and fills in the derived quantities.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kappa: f64,
        nbar: f64,
        eta: f64,
        tau: f64,
        t1: f64,
        rates: Rates,
        phi: StateMap<f64>,
        chi_ge: f64,
    ) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        if !(nbar > 0.0) {
            return Err(Error::Domain(format!("nbar must be positive, got {nbar}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Domain(format!("eta must be in (0, 1], got {eta}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
        if !(t1 > 0.0) {
            return Err(Error::Domain(format!("t1 must be positive, got {t1}")));
        }
        for (from, to, rate) in rates.iter() {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(Error::Domain(format!(
                    "rate {from}->{to} must be finite and non-negative, got {rate}"
                )));
            }
        }
        for (h, &angle) in phi.iter() {
            if !(angle > -PI && angle <= PI) {
                return Err(Error::Domain(format!(
                    "phi_{h} must lie in (-pi, pi], got {angle}"
                )));
            }
        }
        Ok(SystemParams {
            kappa,
            nbar,
            eta,
            tau,
            tau_b: response_time(kappa),
            bandwidth_inv: bandwidth_inv(kappa, tau),
            t1,
            rates,
            phi,
            chi_ge,
        })
    }

    /// Signed e/g pointer phase separation folded to `[0, 2*pi)`.
    pub fn phi_eg(&self) -> f64 {
        angle_diff(self.phi[StateLabel::E], self.phi[StateLabel::G]).abs()
    }
}

/// Derives [`SystemParams`] from a parsed configuration, filling defaults
/// for everything the config leaves unset.
///
/// Default rates: e -> g decays at `1 / t1`; e -> f and g -> e are chosen so
/// that their transition probabilities over [`QND_REFERENCE_WINDOW`] are
/// [`DEFAULT_LEAK_EF_PROB`] and [`DEFAULT_EXCITE_GE_PROB`]; f -> e mirrors
/// e -> f since no separate f lifetime is configured.  Every rate can be
/// overridden with a `rate_<from>_<to>_hz` key.
pub fn derive_params(config: &Config) -> Result<SystemParams> {
    let kappa = TAU * config.kappa_over_2pi_hz;
    let t1 = config.t1_s;
    if !(t1 > 0.0) {
        return Err(Error::Domain(format!("t1_s must be positive, got {t1}")));
    }

    let leak_ef = prob_to_rate(DEFAULT_LEAK_EF_PROB, QND_REFERENCE_WINDOW);
    let excite_ge = prob_to_rate(DEFAULT_EXCITE_GE_PROB, QND_REFERENCE_WINDOW);
    let mut rates = Rates::zero();
    rates.set(StateLabel::E, StateLabel::G, 1.0 / t1);
    rates.set(StateLabel::E, StateLabel::F, leak_ef);
    rates.set(StateLabel::G, StateLabel::E, excite_ge);
    rates.set(StateLabel::F, StateLabel::E, leak_ef);
    for (from, to, rate) in config.rate_overrides() {
        rates.set(from, to, rate);
    }

    let phi = StateMap::from_fn(|h| config.phi[h].unwrap_or(DEFAULT_PHI[h.index()]));

    SystemParams::new(
        kappa,
        config.nbar,
        config.eta,
        config.tau_s,
        t1,
        rates,
        phi,
        DEFAULT_CHI_GE,
    )
}

/// Signal-to-noise ratio of the pointer-state separation,
/// `sqrt(kappa * eta * nbar * (tau + tau_b) / 4) * sin(phi_eg / 2)`.
///
/// This is the idealized value implied by the normalized noise model;
/// measured setups can deviate within their efficiency uncertainty, and the
/// formula value is the contract used by the tests in this crate.
pub fn snr(params: &SystemParams, phi_eg: f64) -> f64 {
    snr_ss(params) * (0.5 * phi_eg).sin()
}

/// Steady-state signal-to-noise ratio
/// `sqrt(kappa * B_inv * eta * nbar / 4)`; equals [`snr`] at
/// `phi_eg = pi`.
pub fn snr_ss(params: &SystemParams) -> f64 {
    (0.25 * params.kappa * params.bandwidth_inv * params.eta * params.nbar).sqrt()
}

/// Per-state noise ellipse: standard deviations along the principal axes and
/// the tilt of the major axis with respect to the I axis, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEllipse {
    pub sigma_major: f64,
    pub sigma_minor: f64,
    pub tilt: f64,
}

impl NoiseEllipse {
    pub fn isotropic() -> Self {
        NoiseEllipse {
            sigma_major: 1.0,
            sigma_minor: 1.0,
            tilt: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_minor > 0.0) || !(self.sigma_major >= self.sigma_minor) {
            return Err(Error::Domain(format!(
                "noise ellipse must satisfy sigma_major >= sigma_minor > 0, got ({}, {})",
                self.sigma_major, self.sigma_minor
            )));
        }
        Ok(())
    }

    /// 2x2 covariance matrix entries (xx, xy, yy) in the IQ frame.
    pub fn covariance(&self) -> (f64, f64, f64) {
        let (sin_t, cos_t) = self.tilt.sin_cos();
        let a = self.sigma_major * self.sigma_major;
        let b = self.sigma_minor * self.sigma_minor;
        (
            a * cos_t * cos_t + b * sin_t * sin_t,
            (a - b) * sin_t * cos_t,
            a * sin_t * sin_t + b * cos_t * cos_t,
        )
    }
}

/// Steady-state pointer per state plus its noise ellipse and drive detuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerModel {
    /// Steady-state pointer `A_H` in normalized units.
    pub alpha: StateMap<Complex64>,
    /// Noise ellipse per state, normalized units.
    pub sigma: StateMap<NoiseEllipse>,
    /// Drive-resonator detuning `omega_drive - omega_H` per state, rad/s.
    pub detuning: StateMap<f64>,
}

impl PointerModel {
    /// Builds the pointer model from system parameters: equal pointer
    /// magnitudes `sqrt(kappa * B_inv * eta * nbar / 2)` at the configured
    /// phases, the given (or isotropic) noise ellipses, and zero detuning.
    pub fn from_params(
        params: &SystemParams,
        squeeze: &StateMap<Option<NoiseEllipse>>,
    ) -> Result<Self> {
        let amplitude =
            (0.5 * params.kappa * params.bandwidth_inv * params.eta * params.nbar).sqrt();
        let model = PointerModel {
            alpha: StateMap::from_fn(|h| Complex64::from_polar(amplitude, params.phi[h])),
            sigma: StateMap::from_fn(|h| squeeze[h].unwrap_or_else(NoiseEllipse::isotropic)),
            detuning: StateMap::splat(0.0),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let norm_g = self.alpha[StateLabel::G].norm();
        let norm_e = self.alpha[StateLabel::E].norm();
        if norm_g <= 0.0 || ((norm_g - norm_e) / norm_g).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "pointer magnitudes of g and e must match, got {norm_g} vs {norm_e}"
            )));
        }
        for (_, ellipse) in self.sigma.iter() {
            ellipse.validate()?;
        }
        Ok(())
    }

    /// Squared Mahalanobis distance of `point` from the state-`h` pointer,
    /// measured against that state's noise ellipse.
    pub fn mahalanobis2(&self, h: StateLabel, point: Complex64) -> f64 {
        let d = point - self.alpha[h];
        let ellipse = &self.sigma[h];
        let (sin_t, cos_t) = ellipse.tilt.sin_cos();
        let along_major = d.re * cos_t + d.im * sin_t;
        let along_minor = -d.re * sin_t + d.im * cos_t;
        let u = along_major / ellipse.sigma_major;
        let v = along_minor / ellipse.sigma_minor;
        u * u + v * v
    }

    /// Standard deviation of the measured phase in state `h`: the tangential
    /// noise component divided by the pointer radius (linearized; adequate
    /// for radii of a few sigma and used uniformly as the likelihood width).
    pub fn phase_sigma(&self, h: StateLabel) -> f64 {
        let alpha = self.alpha[h];
        let radius = alpha.norm();
        let tangent = Complex64::new(-alpha.im, alpha.re) / radius;
        let (cxx, cxy, cyy) = self.sigma[h].covariance();
        let var_tangential =
            cxx * tangent.re * tangent.re + 2.0 * cxy * tangent.re * tangent.im
                + cyy * tangent.im * tangent.im;
        var_tangential.sqrt() / radius
    }
}

/// One ground-truth occupancy segment: the chain sits in `state` from
/// `start` until the next segment begins (or the trace ends).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSegment {
    pub start: f64,
    pub state: StateLabel,
}

/// A uniformly sampled complex readout trace.
///
/// Sample `k` is the demodulator output for the window
/// `[k * dt, (k + 1) * dt)` and is timestamped at the window end,
/// `(k + 1) * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct IQTrace {
    /// Sample spacing (the integration time), s.
    pub dt: f64,
    /// Photon number the trace was generated or recorded at.
    pub nbar: f64,
    /// Complex samples `I + iQ` in normalized units.
    pub samples: Vec<Complex64>,
    /// Ground-truth segments covering `[0, duration()]`, when simulated.
    pub truth: Option<Vec<TruthSegment>>,
}

impl IQTrace {
    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    /// Timestamp of sample `k`.
    pub fn sample_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Domain("trace has no samples".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Domain(format!(
                "trace sample spacing must be positive, got {}",
                self.dt
            )));
        }
        if let Some(k) = self
            .samples
            .iter()
            .position(|s| !s.re.is_finite() || !s.im.is_finite())
        {
            return Err(Error::Domain(format!(
                "sample {k} is not finite: {}",
                self.samples[k]
            )));
        }
        if let Some(truth) = &self.truth {
            if truth.is_empty() {
                return Err(Error::Domain("truth annotation is empty".into()));
            }
            if truth[0].start != 0.0 {
                return Err(Error::Domain(format!(
                    "truth must start at t = 0, got {}",
                    truth[0].start
                )));
            }
            for pair in truth.windows(2) {
                if pair[1].start <= pair[0].start {
                    return Err(Error::Domain(
                        "truth segments must be strictly time-ordered".into(),
                    ));
                }
            }
            if truth[truth.len() - 1].start >= self.duration() {
                return Err(Error::Domain(
                    "truth segment starts past the end of the trace".into(),
                ));
            }
        }
        Ok(())
    }

    /// Ground-truth state at the timestamp of sample `k`: the segment active
    /// just before the window end, so a jump landing exactly on a sample
    /// boundary belongs to the following sample.
    pub fn truth_state_at_sample(&self, k: usize) -> Option<StateLabel> {
        let truth = self.truth.as_ref()?;
        let t = self.sample_time(k);
        let mut state = truth[0].state;
        for segment in truth.iter().skip(1) {
            if segment.start < t {
                state = segment.state;
            } else {
                break;
            }
        }
        Some(state)
    }
}

/// Tuning constants of the recursive Bayesian filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Responsivity coefficient per state; scales the likelihood width.
    pub beta: StateMap<f64>,
    /// Phase-decay coefficient per state used by the phase predictor.
    pub c: StateMap<f64>,
    /// Declaration threshold; a state is declared once its probability
    /// reaches this value (>= compares).
    pub threshold: f64,
    /// Probability floor applied after every update.
    pub floor: f64,
}

impl FilterParams {
    pub fn new(
        beta: StateMap<f64>,
        c: StateMap<f64>,
        threshold: f64,
        floor: f64,
    ) -> Result<Self> {
        for (h, &b) in beta.iter() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Domain(format!("beta_{h} must be positive, got {b}")));
            }
        }
        for (h, &c_h) in c.iter() {
            if !(c_h > 0.0) || !c_h.is_finite() {
                return Err(Error::Domain(format!("c_{h} must be positive, got {c_h}")));
            }
        }
        if !(floor > 0.0 && threshold > floor && threshold <= 1.0) {
            return Err(Error::Domain(format!(
                "need 0 < floor < threshold <= 1, got floor {floor}, threshold {threshold}"
            )));
        }
        if !(3.0 * floor < 1.0) {
            return Err(Error::Domain(format!(
                "3 * floor must stay below 1 so flooring is satisfiable, got floor {floor}"
            )));
        }
        Ok(FilterParams {
            beta,
            c,
            threshold,
            floor,
        })
    }
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            beta: StateMap::splat(1.0),
            c: StateMap::splat(1.0),
            threshold: 0.5,
            floor: 0.1,
        }
    }
}
