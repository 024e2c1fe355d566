//! Synthetic emitters: unit-power symbols rotated by an emitter-specific
//! frequency and phase offset, plus white Gaussian noise.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::modality::{IQTrace, DEFAULT_TRACE_LEN};
use crate::numerics::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    /// Frequency offset in cycles per sample.
    pub delta_f: f64,
    /// Constant phase offset in radians.
    pub phi0: f64,
    /// Linear phase drift in radians per sample.
    pub phi_drift: f64,
    /// Relative I/Q amplitude imbalance; 0 for a balanced front end.
    #[serde(default)]
    pub iq_gain_imbalance: f64,
}

impl EmitterProfile {
    pub const ZERO: EmitterProfile = EmitterProfile {
        delta_f: 0.0,
        phi0: 0.0,
        phi_drift: 0.0,
        iq_gain_imbalance: 0.0,
    };

    /// Phase rotation applied at sample `n`.
    #[inline]
    pub fn phase(&self, n: usize) -> f64 {
        let n = n as f64;
        2.0 * PI * self.delta_f * n + self.phi0 + self.phi_drift * n
    }
}

pub fn make_emitter(rng: &mut RngState) -> EmitterProfile {
    EmitterProfile {
        delta_f: rng.uniform_range(-2e-4, 2e-4),
        phi0: rng.uniform_range(0.0, 0.2),
        phi_drift: rng.uniform_range(-1e-4, 1e-4),
        iq_gain_imbalance: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageMode {
    SameMessages,
    DifferentMessages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
    Qam16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: MessageMode,
    pub n_emitters: usize,
    /// Traces per emitter per day.
    pub traces_per_day: usize,
    pub n_days: usize,
    /// `None` disables the noise.
    pub snr_db: Option<f64>,
    pub modulation: Modulation,
    pub trace_len: usize,
}

impl ScenarioConfig {
    pub fn new(mode: MessageMode, n_emitters: usize, n_days: usize, traces_per_day: usize, snr_db: Option<f64>) -> Self {
        ScenarioConfig {
            mode,
            n_emitters,
            traces_per_day,
            n_days,
            snr_db,
            modulation: Modulation::Qpsk,
            trace_len: DEFAULT_TRACE_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_emitters < 2 {
            return Err(Error::validation("a scenario needs at least two emitters"));
        }
        if self.trace_len == 0 || self.n_days == 0 {
            return Err(Error::validation("trace length and day count must be positive"));
        }
        if self.n_days > u16::MAX as usize + 1 {
            return Err(Error::validation("too many days"));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::validation("SNR must be finite; use no SNR for a noiseless scenario"));
            }
        }
        Ok(())
    }
}

/// Complex baseband symbol `(re, im)`.
pub type Symbol = (f64, f64);

/// Unit average power symbols.
pub fn random_symbols(modulation: Modulation, n: usize, rng: &mut RngState) -> Vec<Symbol> {
    (0..n)
        .map(|_| match modulation {
            Modulation::Qpsk => {
                let k = rng.below(4);
                let re = if k & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                let im = if k & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                (re, im)
            }
            Modulation::Qam16 => {
                const LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];
                let s = 1.0 / 10f64.sqrt();
                (LEVELS[rng.below(4)] * s, LEVELS[rng.below(4)] * s)
            }
        })
        .collect()
}

/// One received trace. `message` is the shared symbol sequence in the
/// same-message scenario; `None` draws fresh symbols.
pub fn synth_trace(
    profile: &EmitterProfile,
    cfg: &ScenarioConfig,
    message: Option<&[Symbol]>,
    rng: &mut RngState,
    emitter_id: i32,
    day: u16,
) -> Result<IQTrace> {
    let fresh;
    let y = match message {
        Some(m) => {
            if m.len() != cfg.trace_len {
                return Err(Error::validation(format!(
                    "message has {} symbols, trace length is {}",
                    m.len(),
                    cfg.trace_len
                )));
            }
            m
        }
        None => {
            fresh = random_symbols(cfg.modulation, cfg.trace_len, rng);
            &fresh[..]
        }
    };
    let sigma = cfg
        .snr_db
        .map(|snr| (10f64.powf(-snr / 10.0) / 2.0).sqrt());
    let gi = 1.0 + profile.iq_gain_imbalance / 2.0;
    let gq = 1.0 - profile.iq_gain_imbalance / 2.0;
    let mut i = Vec::with_capacity(cfg.trace_len);
    let mut q = Vec::with_capacity(cfg.trace_len);
    for (n, &(yr, yi)) in y.iter().enumerate() {
        let (s, c) = profile.phase(n).sin_cos();
        let mut re = gi * (yr * c - yi * s);
        let mut im = gq * (yr * s + yi * c);
        if let Some(sd) = sigma {
            re += sd * rng.normal();
            im += sd * rng.normal();
        }
        i.push(re);
        q.push(im);
    }
    IQTrace::new(i, q, emitter_id, day)
}

/// Emitter-major, then day, then trace order.
pub fn synth_dataset(cfg: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngState::new(seed);
    let mut profile_rng = root.derive(1);
    let profiles: Vec<EmitterProfile> = (0..cfg.n_emitters).map(|_| make_emitter(&mut profile_rng)).collect();
    let message = match cfg.mode {
        MessageMode::SameMessages => Some(random_symbols(cfg.modulation, cfg.trace_len, &mut root.derive(2))),
        MessageMode::DifferentMessages => None,
    };
    let mut traces = Vec::with_capacity(cfg.n_emitters * cfg.n_days * cfg.traces_per_day);
    for (e, p) in profiles.iter().enumerate() {
        let mut rng = root.derive(1000 + e as u64);
        for day in 0..cfg.n_days {
            for _ in 0..cfg.traces_per_day {
                traces.push(synth_trace(p, cfg, message.as_deref(), &mut rng, e as i32, day as u16)?);
            }
        }
    }
    Dataset::new(cfg.trace_len, cfg.n_emitters, traces)
}
