//! Figures of merit: empirical SNR, efficiency extraction, detection-time
//! statistics, repeated-measurement fidelity and filter benchmarks.

use num_complex::Complex64;
use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::filters::{JumpEvent, Predictor, run_bayes, run_latching};
use crate::model::{
    FilterParams, IQTrace, PointerModel, StateLabel, SystemParams, TruthSegment, derive_params,
};
use crate::sim::{InitialState, NoiseMode, STREAM_MARKOV, TrajectorySpec, render_trace, stream_rng};

/// Settling margin, in units of the response time, discarded at the start
/// of every truth segment when estimating steady-state statistics.
const SETTLE_RESPONSE_TIMES: f64 = 5.0;

fn per_state_moments(
    trace: &IQTrace,
    params: &SystemParams,
) -> Result<[(usize, Complex64, f64); 3]> {
    trace.validate()?;
    let truth = trace
        .truth
        .as_ref()
        .ok_or_else(|| Error::Stats("trace carries no ground-truth annotation".into()))?;
    let settle = SETTLE_RESPONSE_TIMES * params.tau_b;

    let mut count = [0usize; 3];
    let mut sum = [Complex64::new(0.0, 0.0); 3];
    let mut seg = 0usize;
    let mut assigned: Vec<Option<StateLabel>> = Vec::with_capacity(trace.samples.len());
    for k in 0..trace.samples.len() {
        let t = trace.sample_time(k);
        while seg + 1 < truth.len() && truth[seg + 1].start < t {
            seg += 1;
        }
        if t - truth[seg].start >= settle {
            let state = truth[seg].state;
            assigned.push(Some(state));
            count[state.index()] += 1;
            sum[state.index()] += trace.samples[k];
        } else {
            assigned.push(None);
        }
    }

    let mean = [0, 1, 2].map(|i| {
        if count[i] > 0 {
            sum[i] / count[i] as f64
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let mut var_total = [0.0f64; 3];
    for (k, state) in assigned.iter().enumerate() {
        if let Some(state) = state {
            let d = trace.samples[k] - mean[state.index()];
            var_total[state.index()] += d.norm_sqr();
        }
    }
    Ok([0, 1, 2].map(|i| {
        let std = if count[i] > 1 {
            (var_total[i] / (count[i] - 1) as f64).sqrt()
        } else {
            0.0
        };
        (count[i], mean[i], std)
    }))
}

/// Empirical g/e signal-to-noise ratio of a truth-annotated trace:
/// `|mean_e - mean_g| / (std_e + std_g)` with per-state total standard
/// deviations `sqrt(var_i + var_q)` computed over steady-state samples
/// (the first few response times of every segment are discarded).
pub fn empirical_snr(trace: &IQTrace, params: &SystemParams) -> Result<f64> {
    let moments = per_state_moments(trace, params)?;
    let (n_g, mean_g, std_g) = moments[StateLabel::G.index()];
    let (n_e, mean_e, std_e) = moments[StateLabel::E.index()];
    if n_g < 1000 || n_e < 1000 {
        return Err(Error::Stats(format!(
            "need at least 1000 settled samples in g and e, got {n_g} and {n_e}"
        )));
    }
    Ok((mean_e - mean_g).norm() / (std_g + std_e))
}

/// Empirical steady-state signal-to-noise ratio of a single-state trace:
/// `|mean| / sqrt(var_i + var_q)` over all samples.
pub fn empirical_snr_ss(trace: &IQTrace) -> Result<f64> {
    trace.validate()?;
    let n = trace.samples.len();
    if n < 1000 {
        return Err(Error::Stats(format!(
            "need at least 1000 samples for a steady-state snr, got {n}"
        )));
    }
    let mean: Complex64 = trace.samples.iter().sum::<Complex64>() / n as f64;
    let var: f64 = trace
        .samples
        .iter()
        .map(|s| (s - mean).norm_sqr())
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(mean.norm() / var.sqrt())
}

/// Result of the efficiency extraction fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyFit {
    pub eta: f64,
    /// One-sigma uncertainty propagated from the slope standard error.
    pub eta_err: f64,
    pub slope: f64,
    pub intercept: f64,
    /// Diagnostic: intercept / (slope * tau_b); 1 when the bandwidth model
    /// holds exactly.
    pub intercept_ratio: f64,
}

/// Least-squares line through `snr_ss^2` versus `tau`; the slope equals
/// `kappa * eta * nbar / 4`, which inverts to the efficiency estimate.
pub fn fit_efficiency(points: &[(f64, f64)], kappa: f64, nbar: f64) -> Result<EfficiencyFit> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Stats(format!(
            "efficiency fit needs at least 3 distinct integration times, got {}",
            distinct.len()
        )));
    }

    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1 * p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, snr) in points {
        let y = snr * snr;
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let dof = (points.len() as f64 - 2.0).max(1.0);
    let mut ss_res = 0.0;
    for &(x, snr) in points {
        let y = snr * snr;
        let r = y - (slope * x + intercept);
        ss_res += r * r;
    }
    let slope_err = (ss_res / dof / sxx).sqrt();

    let tau_b = crate::model::response_time(kappa);
    Ok(EfficiencyFit {
        eta: 4.0 * slope / (kappa * nbar),
        eta_err: 4.0 * slope_err / (kappa * nbar),
        slope,
        intercept,
        intercept_ratio: intercept / (slope * tau_b),
    })
}

/// Matching and binning knobs for [`detection_stats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    /// Maximum |declaration - truth| distance for a match.
    pub window: f64,
    /// Histogram bin width (one sample by default).
    pub bin_width: f64,
    /// Histogram upper edge; longer detection times land in the last bin.
    pub range_max: f64,
}

impl StatsOptions {
    /// Defaults: a matching window of five response times, one-sample bins
    /// spanning twenty response times.
    pub fn from_params(params: &SystemParams) -> Self {
        StatsOptions {
            window: 5.0 * params.tau_b,
            bin_width: params.tau,
            range_max: 20.0 * params.tau_b,
        }
    }
}

/// Detection-time statistics for one transition, mergeable across traces.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStats {
    pub transition: (StateLabel, StateLabel),
    /// Matched declarations.
    pub count: usize,
    sum: f64,
    sum_sq: f64,
    sum_vs_truth: f64,
    /// Histogram of detection times; bin `i` covers
    /// `[i * bin_width, (i + 1) * bin_width)`.
    pub bins: Vec<u64>,
    pub bin_width: f64,
    pub truth_jumps: usize,
    pub declarations: usize,
}

impl DetectionStats {
    pub fn empty(transition: (StateLabel, StateLabel), opts: &StatsOptions) -> Self {
        let n_bins = (opts.range_max / opts.bin_width).ceil().max(1.0) as usize;
        DetectionStats {
            transition,
            count: 0,
            sum: 0.0,
            sum_sq: 0.0,
            sum_vs_truth: 0.0,
            bins: vec![0; n_bins],
            bin_width: opts.bin_width,
            truth_jumps: 0,
            declarations: 0,
        }
    }

    fn record(&mut self, detection_time: f64, vs_truth: f64) {
        self.count += 1;
        self.sum += detection_time;
        self.sum_sq += detection_time * detection_time;
        self.sum_vs_truth += vs_truth;
        let bin = ((detection_time / self.bin_width).floor() as usize).min(self.bins.len() - 1);
        self.bins[bin] += 1;
    }

    /// Mean detection time (declaration minus 2-sigma departure).
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum / self.count as f64
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0).sqrt()
    }

    /// Mean declaration delay relative to the true jump time.
    pub fn mean_vs_truth(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum_vs_truth / self.count as f64
    }

    /// Truth jumps with no matching declaration, as a fraction of truth.
    pub fn miss_rate(&self) -> f64 {
        if self.truth_jumps == 0 {
            return 0.0;
        }
        (self.truth_jumps - self.count) as f64 / self.truth_jumps as f64
    }

    /// Declarations with no matching truth jump, as a fraction of
    /// declarations.
    pub fn false_positive_rate(&self) -> f64 {
        if self.declarations == 0 {
            return 0.0;
        }
        (self.declarations - self.count) as f64 / self.declarations as f64
    }

    pub fn merge(&mut self, other: &DetectionStats) {
        assert_eq!(self.transition, other.transition);
        assert_eq!(self.bins.len(), other.bins.len());
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.sum_vs_truth += other.sum_vs_truth;
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.truth_jumps += other.truth_jumps;
        self.declarations += other.declarations;
    }

    /// Plot-ready histogram table: `bin_start,bin_end,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, count) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{count}\n",
                i as f64 * self.bin_width,
                (i + 1) as f64 * self.bin_width
            ));
        }
        out
    }
}

/// Ground-truth jump times of one transition.
fn truth_jump_times(
    truth: &[TruthSegment],
    transition: (StateLabel, StateLabel),
) -> Vec<f64> {
    truth
        .windows(2)
        .filter(|pair| pair[0].state == transition.0 && pair[1].state == transition.1)
        .map(|pair| pair[1].start)
        .collect()
}

/// Pairs the declarations of one transition with its truth jumps:
/// nearest-in-time first, one-to-one, within `window`.  Returns the matched
/// events with `true_time` filled plus the total declaration and truth-jump
/// counts for the transition.
pub fn match_events(
    events: &[JumpEvent],
    truth: &[TruthSegment],
    transition: (StateLabel, StateLabel),
    window: f64,
) -> (Vec<JumpEvent>, usize, usize) {
    let declared: Vec<&JumpEvent> = events
        .iter()
        .filter(|e| e.from == transition.0 && e.to == transition.1)
        .collect();
    let truths = truth_jump_times(truth, transition);

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, event) in declared.iter().enumerate() {
        for (j, &t) in truths.iter().enumerate() {
            let distance = (event.declare_time - t).abs();
            if distance <= window {
                candidates.push((distance, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut event_taken = vec![false; declared.len()];
    let mut truth_taken = vec![false; truths.len()];
    let mut matched = Vec::new();
    for (_, i, j) in candidates {
        if event_taken[i] || truth_taken[j] {
            continue;
        }
        event_taken[i] = true;
        truth_taken[j] = true;
        let mut event = *declared[i];
        event.true_time = Some(truths[j]);
        matched.push(event);
    }
    matched.sort_by(|a, b| a.declare_time.total_cmp(&b.declare_time));
    (matched, declared.len(), truths.len())
}

/// Fills `true_time` on every event that matches a truth jump of its own
/// transition within `window`; unmatched events pass through untouched.
pub fn annotate_events(
    events: &[JumpEvent],
    truth: &[TruthSegment],
    window: f64,
) -> Vec<JumpEvent> {
    let mut annotated = events.to_vec();
    for from in StateLabel::ALL {
        for to in StateLabel::ALL {
            if from == to {
                continue;
            }
            let (matched, _, _) = match_events(events, truth, (from, to), window);
            for m in matched {
                if let Some(slot) = annotated.iter_mut().find(|e| {
                    e.from == m.from
                        && e.to == m.to
                        && e.declare_time == m.declare_time
                        && e.true_time.is_none()
                }) {
                    slot.true_time = m.true_time;
                }
            }
        }
    }
    annotated
}

/// Matches declared events of one transition against truth jumps
/// (nearest-in-time, one-to-one, greedy by time distance within the window)
/// and accumulates detection-time statistics.  Unmatched truth jumps count
/// as misses, unmatched declarations as false positives.
pub fn detection_stats(
    events: &[JumpEvent],
    truth: &[TruthSegment],
    transition: (StateLabel, StateLabel),
    opts: &StatsOptions,
) -> DetectionStats {
    let mut stats = DetectionStats::empty(transition, opts);
    let (matched, declarations, truth_jumps) =
        match_events(events, truth, transition, opts.window);
    stats.declarations = declarations;
    stats.truth_jumps = truth_jumps;
    for event in matched {
        stats.record(
            event.detection_time(),
            event.declare_time - event.true_time.unwrap(),
        );
    }
    stats
}

/// Repeated-measurement agreement over a fixed delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QndReport {
    pub p_ee: f64,
    pub p_gg: f64,
    /// `(p_ee + p_gg) / 2`.
    pub fidelity: f64,
    pub n_pairs: u64,
    /// Actual pair separation used (the requested delay rounded to samples).
    pub pair_gap: f64,
    /// Destination distribution of pairs starting in e.
    pub from_e_to: [f64; 3],
    /// Destination distribution of pairs starting in g.
    pub from_g_to: [f64; 3],
}

impl QndReport {
    /// Fidelity report row: `p_ee,p_gg,fidelity,n_pairs`.
    pub fn to_csv(&self) -> String {
        format!(
            "p_ee,p_gg,fidelity,n_pairs\n{},{},{},{}\n",
            self.p_ee, self.p_gg, self.fidelity, self.n_pairs
        )
    }
}

/// Mergeable pair counts behind [`qnd_fidelity`].
#[derive(Debug, Clone, Copy, Default)]
pub struct QndCounts {
    pairs: [[u64; 3]; 3],
}

impl QndCounts {
    /// Accumulates all sample pairs `(k, k + gap)` of one state sequence.
    pub fn absorb(&mut self, states: &[StateLabel], gap_samples: usize) {
        if states.len() <= gap_samples {
            return;
        }
        for k in 0..(states.len() - gap_samples) {
            self.pairs[states[k].index()][states[k + gap_samples].index()] += 1;
        }
    }

    pub fn n_pairs(&self) -> u64 {
        self.pairs.iter().flatten().sum()
    }

    pub fn finalize(&self, pair_gap: f64) -> Result<QndReport> {
        let n_pairs = self.n_pairs();
        if n_pairs < 1000 {
            return Err(Error::Stats(format!(
                "need at least 1000 measurement pairs, got {n_pairs}"
            )));
        }
        let row = |from: StateLabel| -> Result<[f64; 3]> {
            let total: u64 = self.pairs[from.index()].iter().sum();
            if total == 0 {
                return Err(Error::Stats(format!(
                    "no measurement pairs start in state {from}"
                )));
            }
            Ok(self.pairs[from.index()].map(|c| c as f64 / total as f64))
        };
        let from_g_to = row(StateLabel::G)?;
        let from_e_to = row(StateLabel::E)?;
        let p_ee = from_e_to[StateLabel::E.index()];
        let p_gg = from_g_to[StateLabel::G.index()];
        Ok(QndReport {
            p_ee,
            p_gg,
            fidelity: 0.5 * (p_ee + p_gg),
            n_pairs,
            pair_gap,
            from_e_to,
            from_g_to,
        })
    }
}

/// Probability that the filter reports the same state after `delta_t`,
/// estimated over all (maximally overlapping) sample pairs of the declared
/// state sequence.
pub fn qnd_fidelity(states: &[StateLabel], dt: f64, delta_t: f64) -> Result<QndReport> {
    let gap = ((delta_t / dt).round() as usize).max(1);
    let mut counts = QndCounts::default();
    counts.absorb(states, gap);
    counts.finalize(gap as f64 * dt)
}

/// A scripted single-jump benchmark: `count` traces, each resting in `from`
/// and jumping to `to` at a fixed time plus a random sub-sample offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpBenchSpec {
    pub from: StateLabel,
    pub to: StateLabel,
    /// Rest time before the jump.
    pub pre: f64,
    /// Observation time after the jump.
    pub post: f64,
    pub count: usize,
    pub seed: u64,
    pub noise: NoiseMode,
    /// Truth-matching window for the statistics.
    pub window: f64,
}

/// Per-filter detection statistics over a scripted jump ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub bayes: DetectionStats,
    pub latch: DetectionStats,
}

/// Runs the full simulate -> filter -> statistics pipeline for both filters
/// over a scripted single-jump ensemble.
pub fn jump_detection_benchmark(
    params: &SystemParams,
    pointer: &PointerModel,
    filterp: &FilterParams,
    predictor: Predictor,
    spec: &JumpBenchSpec,
) -> Result<BenchResult> {
    let mut opts = StatsOptions::from_params(params);
    opts.window = spec.window;
    let transition = (spec.from, spec.to);
    let mut bayes = DetectionStats::empty(transition, &opts);
    let mut latch = DetectionStats::empty(transition, &opts);

    for i in 0..spec.count {
        let seed = spec.seed.wrapping_add(i as u64);
        // sub-sample jump offset so jumps are not aligned to the clock
        let offset: f64 = stream_rng(seed, STREAM_MARKOV).random::<f64>() * params.tau;
        let t_jump = spec.pre + offset;
        let duration = spec.pre + spec.post;
        let path = [
            TruthSegment {
                start: 0.0,
                state: spec.from,
            },
            TruthSegment {
                start: t_jump,
                state: spec.to,
            },
        ];
        let sim_spec = TrajectorySpec {
            duration,
            seed,
            initial_state: InitialState::Fixed(spec.from),
            noise: spec.noise,
        };
        let trace = render_trace(params, pointer, &path, &sim_spec)?;
        let truth = trace.truth.as_deref().unwrap();

        let bayes_run = run_bayes(&trace, params, pointer, filterp, predictor, spec.from);
        bayes.merge(&detection_stats(&bayes_run.events, truth, transition, &opts));

        let latch_run = run_latching(&trace, pointer, params, spec.from);
        latch.merge(&detection_stats(&latch_run.events, truth, transition, &opts));
    }

    Ok(BenchResult { bayes, latch })
}

/// Sweep axis for the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Tau,
    Nbar,
}

impl SweepAxis {
    pub fn parse(text: &str) -> Option<SweepAxis> {
        match text {
            "tau" => Some(SweepAxis::Tau),
            "nbar" => Some(SweepAxis::Nbar),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Nbar => "nbar",
        }
    }
}

/// One grid point of a sweep: both filters benchmarked at the modified
/// operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPointResult {
    pub value: f64,
    pub bayes: DetectionStats,
    pub latch: DetectionStats,
}

/// A completed sweep over strictly increasing axis values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPointResult>,
}

impl SweepResult {
    pub fn new(axis: SweepAxis, points: Vec<SweepPointResult>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Stats("sweep has no grid points".into()));
        }
        for pair in points.windows(2) {
            if pair[1].value <= pair[0].value {
                return Err(Error::Domain(format!(
                    "sweep axis values must be strictly increasing, got {} after {}",
                    pair[1].value, pair[0].value
                )));
            }
        }
        Ok(SweepResult { axis, points })
    }

    /// Sweep table with one row per (point, filter):
    /// `axis,filter,mean_s,std_s,miss_rate,fp_rate`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# axis={}\n# transition=g->e\n", self.axis.name());
        out.push_str("axis,filter,mean_s,std_s,miss_rate,fp_rate\n");
        for point in &self.points {
            for (name, stats) in [("bayes", &point.bayes), ("latch", &point.latch)] {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    point.value,
                    name,
                    stats.mean(),
                    stats.std(),
                    stats.miss_rate(),
                    stats.false_positive_rate()
                ));
            }
        }
        out
    }
}

/// Runs the g -> e benchmark at one sweep grid point.  The axis value
/// overrides the corresponding config entry; everything else (including the
/// filter constants) comes from the config.
pub fn sweep_point(
    config: &Config,
    axis: SweepAxis,
    value: f64,
    per_point: usize,
    seed: u64,
) -> Result<SweepPointResult> {
    let mut point_config = config.clone();
    match axis {
        SweepAxis::Tau => point_config.tau_s = value,
        SweepAxis::Nbar => point_config.nbar = value,
    }
    let params = derive_params(&point_config)?;
    let pointer = PointerModel::from_params(&params, &point_config.squeeze)?;
    let filterp = point_config.filter_params()?;
    let noise = if point_config.has_squeeze() {
        NoiseMode::Squeezed
    } else {
        NoiseMode::Isotropic
    };

    let spec = JumpBenchSpec {
        from: StateLabel::G,
        to: StateLabel::E,
        pre: 30.0 * params.tau_b.max(params.tau),
        post: 60.0 * params.tau_b.max(params.tau),
        count: per_point,
        seed,
        noise,
        window: 20.0 * params.tau_b,
    };
    let result = jump_detection_benchmark(&params, &pointer, &filterp, Predictor::Phase, &spec)?;
    Ok(SweepPointResult {
        value,
        bayes: result.bayes,
        latch: result.latch,
    })
}
