//! Deterministic synthetic activity generator.
//!
//! Classes come in pairs sharing one frequency band. Within a window every
//! sensor plays the band either quietly or loudly, coherently across that
//! sensor's variables:
//!
//! * the **aligned** class of a pair draws a single coin per window, so all
//!   sensors agree on the level;
//! * the **anti** class splits the sensors into two fixed, roughly equal
//!   camps (drawn once per band) that always take opposite levels; a
//!   per-window coin decides which camp is loud.
//!
//! Per-channel statistics are identical inside a pair (each channel is
//! quiet/loud with probability 1/2 either way); only the cross-sensor
//! agreement pattern separates the two classes. Distinguishing them
//! therefore requires comparing sensors, not pooling them: any per-sensor
//! feature map followed by a linear readout yields class scores affine in
//! the number of loud sensors, and the anti counts (k and N-k for camp size
//! k) lie strictly between the aligned counts (0 and N), so no threshold on
//! such a score separates the pair. Band identity stays linearly decodable, so
//! pair-level structure is easy and within-pair structure exercises
//! cross-sensor reasoning. An odd trailing class (or every class when only
//! one sensor exists) gets its own band at full level with no relational
//! component. The loud/quiet ratio is chosen so per-subject amplitude
//! jitter, which models subject heterogeneity, never flips a quiet channel
//! above a loud one across subjects.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::recording::{channel_names, Recording};
use crate::error::{Error, Result};
use crate::util::seed_stream;

/// Lowest band frequency in Hz.
const BASE_HZ: f64 = 1.5;
/// Spacing between consecutive band base frequencies in Hz. Kept small so
/// even high bands stay well below Nyquist at wearable-typical rates and
/// every carrier spans several samples per cycle.
const BAND_GAP_HZ: f64 = 2.0;
/// Within-band spread of per-channel frequency offsets in Hz.
const CHANNEL_SPAN_HZ: f64 = 0.5;
/// Carrier level of a quiet sensor in a paired class. Chosen with
/// `AMP_LOUD` so the loud/quiet gap survives the worst-case amplitude
/// jitter across subjects (1.6 * 0.7 > 0.3 * 1.3).
const AMP_QUIET: f64 = 0.3;
/// Carrier level of a loud sensor in a paired class.
const AMP_LOUD: f64 = 1.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_subjects: usize,
    /// Windows emitted per (subject, class).
    pub windows_per_class: usize,
    pub n_sensors: usize,
    pub m_vars: usize,
    pub window_len: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    /// Relative per-subject amplitude jitter (0.1 = +-10%).
    pub amp_jitter: f64,
    pub seed: u64,
}

/// How one class maps onto a frequency band.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    /// All sensors share one per-window carrier choice.
    Aligned,
    /// Two fixed sensor camps take opposite per-window carrier choices.
    Anti,
    /// Band-only class with no relational component (always `lo`).
    Single,
}

/// Band index and relational role for every class under this spec.
fn class_roles(spec: &SynthSpec) -> Vec<(usize, Role)> {
    let paired = spec.n_sensors >= 2;
    (0..spec.n_classes)
        .map(|k| {
            if !paired {
                (k, Role::Single)
            } else if k == spec.n_classes - 1 && spec.n_classes % 2 == 1 {
                (k / 2, Role::Single)
            } else {
                (k / 2, if k % 2 == 0 { Role::Aligned } else { Role::Anti })
            }
        })
        .collect()
}

fn n_bands(spec: &SynthSpec) -> usize {
    if spec.n_sensors >= 2 {
        spec.n_classes.div_ceil(2)
    } else {
        spec.n_classes
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_classes", self.n_classes),
            ("n_subjects", self.n_subjects),
            ("windows_per_class", self.windows_per_class),
            ("n_sensors", self.n_sensors),
            ("m_vars", self.m_vars),
            ("window_len", self.window_len),
        ] {
            if v == 0 {
                return Err(Error::config(format!("synthetic spec: {name} must be >= 1")));
            }
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::config("synthetic spec: sample rate must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("synthetic spec: noise_std must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.amp_jitter) {
            return Err(Error::config("synthetic spec: amp_jitter must lie in [0, 1)"));
        }
        let max_hz = BASE_HZ + (n_bands(self) - 1) as f64 * BAND_GAP_HZ + CHANNEL_SPAN_HZ;
        if max_hz >= self.sample_rate_hz / 2.0 {
            return Err(Error::config(format!(
                "synthetic spec: {} classes need frequencies up to {max_hz} Hz, above the Nyquist \
                 limit of a {} Hz rate; raise the sample rate or lower the class count",
                self.n_classes, self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// One recording per subject; windows of every class are interleaved so each
/// recording covers all classes. Fully deterministic in the seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    let (kc, ns, nm) = (spec.n_classes, spec.n_sensors, spec.m_vars);
    let channels = ns * nm;
    let l = spec.window_len;
    let roles = class_roles(spec);
    let bands = n_bands(spec);

    // Band/channel carrier parameters, drawn once in (band, sensor,
    // variable) order from a dedicated stream. Paired classes share a band
    // and therefore identical per-channel carriers and phases.
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(spec.seed, "synth-params"));
    let mut lo_freqs = vec![0.0; bands * channels];
    let mut phases = vec![0.0; bands * channels];
    for b in 0..bands {
        for c in 0..channels {
            lo_freqs[b * channels + c] =
                BASE_HZ + b as f64 * BAND_GAP_HZ + rng.gen::<f64>() * CHANNEL_SPAN_HZ;
            phases[b * channels + c] = rng.gen::<f64>() * std::f64::consts::TAU;
        }
    }
    // Anti-class camp membership per band: a random half (rounded down, at
    // least one) of the sensors forms camp A.
    let mut camps = vec![false; bands * ns];
    if ns >= 2 {
        let camp_size = (ns / 2).max(1);
        let mut order: Vec<usize> = (0..ns).collect();
        for b in 0..bands {
            order.shuffle(&mut rng);
            for &s in &order[..camp_size] {
                camps[b * ns + s] = true;
            }
        }
    }

    // Per-subject channel amplitudes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(spec.seed, "synth-amp"));
    let mut amps = vec![1.0; spec.n_subjects * channels];
    for a in amps.iter_mut() {
        *a = 1.0 + spec.amp_jitter * (2.0 * rng.gen::<f64>() - 1.0);
    }

    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::internal(format!("noise distribution: {e}")))?;
    let mut recordings = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(spec.seed, &format!("synth-subject-{s}")));
        let steps = kc * spec.windows_per_class * l;
        let mut signals = Vec::with_capacity(steps * channels);
        let mut labels = Vec::with_capacity(steps);
        let mut choices = vec![false; ns];
        for _ in 0..spec.windows_per_class {
            for k in 0..kc {
                let (band, role) = roles[k];
                // per-window draws, in a fixed order: carrier choices,
                // then one noise sample per value
                match role {
                    Role::Aligned => {
                        let all = rng.gen::<bool>();
                        choices.iter_mut().for_each(|c| *c = all);
                    }
                    Role::Anti => {
                        let camp_a_loud = rng.gen::<bool>();
                        for (s, c) in choices.iter_mut().enumerate() {
                            *c = camps[band * ns + s] == camp_a_loud;
                        }
                    }
                    Role::Single => choices.iter_mut().for_each(|c| *c = false),
                }
                for t in 0..l {
                    for c in 0..channels {
                        let f = lo_freqs[band * channels + c];
                        let phase = phases[band * channels + c];
                        let level = match role {
                            Role::Single => 1.0,
                            _ => {
                                if choices[c / nm] {
                                    AMP_LOUD
                                } else {
                                    AMP_QUIET
                                }
                            }
                        };
                        let amp = level * amps[s * channels + c];
                        let carrier = amp
                            * (std::f64::consts::TAU * f * t as f64 / spec.sample_rate_hz + phase).sin();
                        signals.push(carrier + spec.noise_std * noise.sample(&mut rng));
                    }
                    labels.push(k);
                }
            }
        }
        recordings.push(Recording {
            subject_id: format!("subject_{s}"),
            sample_rate_hz: spec.sample_rate_hz,
            signals,
            n_channels: channels,
            labels,
            channel_names: channel_names(ns, nm),
        });
    }
    Ok(recordings)
}

/// Placeholder class names for generated datasets.
pub fn synth_class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes).map(|k| format!("activity_{k}")).collect()
}
