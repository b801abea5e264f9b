//! Plain-text `key=value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are a hard error so typos cannot silently fall back to
//! defaults.  Recognized keys:
//!
//! ```text
//! kappa_over_2pi_hz   resonator linewidth kappa / 2pi, Hz        (required)
//! nbar                mean readout photon number                 (required)
//! eta                 measurement efficiency in (0, 1]           (required)
//! tau_s               integration time, s                        (required)
//! t1_s                e -> g relaxation time, s                  (required)
//! phi_g|phi_e|phi_f   steady-state pointer phases, rad
//! rate_<from>_<to>_hz transition-rate override, 1/s (states g, e, f)
//! beta_<state>        Bayesian responsivity coefficient
//! c_<state>           phase-decay coefficient of the predictor
//! threshold           declaration probability
//! floor               minimum probability
//! squeeze_<state>     noise ellipse as "major,minor,tilt"
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FilterParams, NoiseEllipse, StateLabel, StateMap};

/// A parsed configuration.  Optional entries remember whether they were
/// present so that [`Config::emit`] round-trips exactly the keys (and bit
/// values) of the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kappa_over_2pi_hz: f64,
    pub nbar: f64,
    pub eta: f64,
    pub tau_s: f64,
    pub t1_s: f64,
    pub phi: StateMap<Option<f64>>,
    pub rates_hz: [[Option<f64>; 3]; 3],
    pub beta: StateMap<Option<f64>>,
    pub c: StateMap<Option<f64>>,
    pub threshold: Option<f64>,
    pub floor: Option<f64>,
    pub squeeze: StateMap<Option<NoiseEllipse>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut kappa_over_2pi_hz = None;
        let mut nbar = None;
        let mut eta = None;
        let mut tau_s = None;
        let mut t1_s = None;
        let mut phi = StateMap::splat(None);
        let mut rates_hz = [[None; 3]; 3];
        let mut beta = StateMap::splat(None);
        let mut c = StateMap::splat(None);
        let mut threshold = None;
        let mut floor = None;
        let mut squeeze = StateMap::splat(None);

        for (line_no, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", line_no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();

            let store = |slot: &mut Option<f64>| -> Result<()> {
                if slot.is_some() {
                    return Err(Error::Config(format!(
                        "line {}: duplicate key '{key}'",
                        line_no + 1
                    )));
                }
                *slot = Some(parse_f64(key, value)?);
                Ok(())
            };

            match key {
                "kappa_over_2pi_hz" => store(&mut kappa_over_2pi_hz)?,
                "nbar" => store(&mut nbar)?,
                "eta" => store(&mut eta)?,
                "tau_s" => store(&mut tau_s)?,
                "t1_s" => store(&mut t1_s)?,
                "threshold" => store(&mut threshold)?,
                "floor" => store(&mut floor)?,
                _ => {
                    if let Some(state) = key.strip_prefix("phi_").and_then(StateLabel::parse) {
                        store(&mut phi[state])?;
                    } else if let Some(state) =
                        key.strip_prefix("beta_").and_then(StateLabel::parse)
                    {
                        store(&mut beta[state])?;
                    } else if let Some(state) = key.strip_prefix("c_").and_then(StateLabel::parse)
                    {
                        store(&mut c[state])?;
                    } else if let Some(state) =
                        key.strip_prefix("squeeze_").and_then(StateLabel::parse)
                    {
                        if squeeze[state].is_some() {
                            return Err(Error::Config(format!(
                                "line {}: duplicate key '{key}'",
                                line_no + 1
                            )));
                        }
                        squeeze[state] = Some(parse_ellipse(key, value)?);
                    } else if let Some((from, to)) = parse_rate_key(key) {
                        store(&mut rates_hz[from.index()][to.index()])?;
                    } else {
                        return Err(Error::Config(format!(
                            "line {}: unknown key '{key}'",
                            line_no + 1
                        )));
                    }
                }
            }
        }

        let require = |slot: Option<f64>, name: &str| {
            slot.ok_or_else(|| Error::Config(format!("missing mandatory key '{name}'")))
        };
        Ok(Config {
            kappa_over_2pi_hz: require(kappa_over_2pi_hz, "kappa_over_2pi_hz")?,
            nbar: require(nbar, "nbar")?,
            eta: require(eta, "eta")?,
            tau_s: require(tau_s, "tau_s")?,
            t1_s: require(t1_s, "t1_s")?,
            phi,
            rates_hz,
            beta,
            c,
            threshold,
            floor,
            squeeze,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Config> {
        let text = fs::read_to_string(path)?;
        Config::parse(&text)
    }

    /// Re-emits the configuration.  Keys that were absent from the parsed
    /// source stay absent; values round-trip bit-exactly.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: f64| {
            out.push_str(&format!("{key}={value}\n"));
        };
        push("kappa_over_2pi_hz", self.kappa_over_2pi_hz);
        push("nbar", self.nbar);
        push("eta", self.eta);
        push("tau_s", self.tau_s);
        push("t1_s", self.t1_s);
        for h in StateLabel::ALL {
            if let Some(v) = self.phi[h] {
                push(&format!("phi_{h}"), v);
            }
        }
        for from in StateLabel::ALL {
            for to in StateLabel::ALL {
                if let Some(v) = self.rates_hz[from.index()][to.index()] {
                    push(&format!("rate_{from}_{to}_hz"), v);
                }
            }
        }
        for h in StateLabel::ALL {
            if let Some(v) = self.beta[h] {
                push(&format!("beta_{h}"), v);
            }
        }
        for h in StateLabel::ALL {
            if let Some(v) = self.c[h] {
                push(&format!("c_{h}"), v);
            }
        }
        if let Some(v) = self.threshold {
            push("threshold", v);
        }
        if let Some(v) = self.floor {
            push("floor", v);
        }
        for h in StateLabel::ALL {
            if let Some(e) = self.squeeze[h] {
                out.push_str(&format!(
                    "squeeze_{h}={},{},{}\n",
                    e.sigma_major, e.sigma_minor, e.tilt
                ));
            }
        }
        out
    }

    /// Rate overrides present in the file, in (from, to, rate-in-hz) form.
    pub fn rate_overrides(&self) -> impl Iterator<Item = (StateLabel, StateLabel, f64)> + '_ {
        StateLabel::ALL.into_iter().flat_map(move |from| {
            StateLabel::ALL.into_iter().filter_map(move |to| {
                self.rates_hz[from.index()][to.index()]
                    .filter(|_| from != to)
                    .map(|rate| (from, to, rate))
            })
        })
    }

    /// Bayesian filter constants with defaults for absent keys.
    pub fn filter_params(&self) -> Result<FilterParams> {
        FilterParams::new(
            StateMap::from_fn(|h| self.beta[h].unwrap_or(1.0)),
            StateMap::from_fn(|h| self.c[h].unwrap_or(1.0)),
            self.threshold.unwrap_or(0.5),
            self.floor.unwrap_or(0.1),
        )
    }

    /// Whether any squeeze key is present.
    pub fn has_squeeze(&self) -> bool {
        StateLabel::ALL.iter().any(|&h| self.squeeze[h].is_some())
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let parsed: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}' as a number")))?;
    if !parsed.is_finite() {
        return Err(Error::Config(format!("key '{key}': value must be finite")));
    }
    Ok(parsed)
}

fn parse_rate_key(key: &str) -> Option<(StateLabel, StateLabel)> {
    let body = key.strip_prefix("rate_")?.strip_suffix("_hz")?;
    let (from, to) = body.split_once('_')?;
    let from = StateLabel::parse(from)?;
    let to = StateLabel::parse(to)?;
    if from == to {
        return None;
    }
    Some((from, to))
}

fn parse_ellipse(key: &str, value: &str) -> Result<NoiseEllipse> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "key '{key}': expected 'major,minor,tilt', got '{value}'"
        )));
    }
    let ellipse = NoiseEllipse {
        sigma_major: parse_f64(key, parts[0])?,
        sigma_minor: parse_f64(key, parts[1])?,
        tilt: parse_f64(key, parts[2])?,
    };
    ellipse.validate()?;
    Ok(ellipse)
}
