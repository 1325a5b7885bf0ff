//! Synthetic participant and acquisition device. The real state machine is
//! driven with a simulated clock and rater; EEG and fNIRS streams are then
//! synthesized around the resulting timeline with label-dependent
//! components planted in every music period.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ingest::{SampleStore, StreamKind};
use super::machine::{Command, ParadigmConfig, Phase, Problem, SessionMachine};
use super::plan::{participant_seed, SessionPlan};
use crate::quadrant::EmotionQuadrant;
use crate::sigproc::{EventKind, OpticalConstants, EEG_RATE, FNIRS_CHANNELS, FNIRS_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalProfile {
    /// White-noise SD before the AR(1) colouring, µV.
    pub eeg_noise_uv: f64,
    pub eeg_ar: f64,
    /// Slow electrode drift (0.05 Hz) and mains pickup (50 Hz), µV.
    pub drift_uv: f64,
    pub mains_uv: f64,
    /// 10 Hz bursts planted when the felt valence is high.
    pub alpha_uv: f64,
    /// 20 Hz bursts planted when the felt arousal is high.
    pub beta_uv: f64,
    /// Plateau HbO change during music, positive for high valence and
    /// negative for low.
    pub hbo_response_um: f64,
    /// Plateau HbR change, positive for high arousal.
    pub hbr_response_um: f64,
    pub response_tau_s: f64,
    pub hb_noise_um: f64,
    pub mayer_um: f64,
    /// Cardiac pulsation amplitude at 850 nm, in optical density.
    pub cardiac_od: f64,
    pub hr_rest_bpm: f64,
    pub hr_low_arousal_bpm: f64,
    pub hr_high_arousal_bpm: f64,
    /// Mean detected light intensity.
    pub intensity: f64,
    /// Probability that a felt dimension matches the music's polarity.
    pub rating_agreement: f64,
    /// Probability of answering exactly 5 on a dimension.
    pub rating_neutral: f64,
    pub rating_dwell_s: (f64, f64),
    pub arithmetic_dwell_s: (f64, f64),
    pub arithmetic_error_rate: f64,
    pub session_gap_s: f64,
    /// Recording before each session start and after each session end.
    pub lead_s: f64,
    /// SD of the multiplicative per-subject gain on planted components.
    pub subject_gain_sd: f64,
    pub eeg_quantum_uv: f64,
    pub intensity_quantum: f64,
}

impl Default for SignalProfile {
    fn default() -> Self {
        Self {
            eeg_noise_uv: 6.0,
            eeg_ar: 0.6,
            drift_uv: 15.0,
            mains_uv: 4.0,
            alpha_uv: 8.0,
            beta_uv: 6.0,
            hbo_response_um: 0.8,
            hbr_response_um: 0.3,
            response_tau_s: 6.0,
            hb_noise_um: 0.03,
            mayer_um: 0.3,
            cardiac_od: 0.003,
            hr_rest_bpm: 72.0,
            hr_low_arousal_bpm: 64.0,
            hr_high_arousal_bpm: 86.0,
            intensity: 1500.0,
            rating_agreement: 0.85,
            rating_neutral: 0.08,
            rating_dwell_s: (2.0, 6.0),
            arithmetic_dwell_s: (6.0, 12.0),
            arithmetic_error_rate: 0.1,
            session_gap_s: 300.0,
            lead_s: 10.0,
            subject_gain_sd: 0.15,
            eeg_quantum_uv: 0.01,
            intensity_quantum: 0.01,
        }
    }
}

/// Finished paradigm plus everything the device streamed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub machine: SessionMachine,
    pub store: SampleStore,
}

/// Clip ids `sim_<quadrant>_<n>` for planning without a real corpus.
pub fn synthetic_library(per_quadrant: usize) -> BTreeMap<EmotionQuadrant, Vec<String>> {
    EmotionQuadrant::ALL
        .iter()
        .map(|q| {
            (
                *q,
                (0..per_quadrant)
                    .map(|i| format!("sim_{}_{i:02}", q.as_str().to_lowercase()))
                    .collect(),
            )
        })
        .collect()
}

fn rng(base: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(stream);
    r
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn score(rng: &mut ChaCha8Rng, high: bool, p: &SignalProfile) -> i64 {
    if rng.random_bool(p.rating_neutral) {
        5
    } else if high {
        rng.random_range(6..=9)
    } else {
        rng.random_range(1..=4)
    }
}

/// Runs the whole study with a simulated rater. Dwell times are whole
/// milliseconds so every event lands on an integer timestamp.
fn run_paradigm(
    plan: &SessionPlan,
    paradigm: &ParadigmConfig,
    p: &SignalProfile,
    rng: &mut ChaCha8Rng,
) -> SessionMachine {
    let mut m = SessionMachine::new(plan.clone(), paradigm.clone());
    let ms = |s: f64| (s * 1000.0).round();
    let mut t = ms(p.lead_s);
    let agree = p.rating_agreement.clamp(0.0, 1.0);
    let mut rating_cap = paradigm
        .rating_timeout_ms
        .map_or(f64::INFINITY, |x| x - 1.0);
    rating_cap = rating_cap.max(0.0);
    loop {
        let result = match m.phase() {
            Phase::Finished => break,
            Phase::Idle => {
                if !m.timeline().events().is_empty() {
                    t += ms(p.session_gap_s);
                }
                m.advance(t, Command::Start)
            }
            Phase::Rating => {
                let tid = m.current_trial_id().expect("rating phase has a trial");
                let q = plan.slot(tid).expect("trial in plan").quadrant;
                let v_high = if rng.random_bool(agree) {
                    q.valence_high()
                } else {
                    !q.valence_high()
                };
                let a_high = if rng.random_bool(agree) {
                    q.arousal_high()
                } else {
                    !q.arousal_high()
                };
                let valence = score(rng, v_high, p);
                let arousal = score(rng, a_high, p);
                let liking = (valence + rng.random_range(-2..=2)).clamp(1, 9);
                let started = m.view().phase_started_ms.expect("phase started");
                t = started + ms(uniform(rng, p.rating_dwell_s)).min(rating_cap);
                m.advance(
                    t,
                    Command::Rating {
                        trial_id: tid,
                        valence,
                        arousal,
                        liking,
                    },
                )
            }
            Phase::Arithmetic => {
                let rec = m.arithmetic().last().expect("arithmetic record");
                let block_id = rec.block_id;
                let answers = rec
                    .problems
                    .iter()
                    .map(Problem::answer)
                    .collect::<Vec<_>>()
                    .into_iter()
                    .map(|a| {
                        if rng.random_bool(p.arithmetic_error_rate.clamp(0.0, 1.0)) {
                            a + 1
                        } else {
                            a
                        }
                    })
                    .collect();
                t += ms(uniform(rng, p.arithmetic_dwell_s));
                m.advance(t, Command::Arithmetic { block_id, answers })
            }
            _ => {
                t = m.deadline().expect("timed phase has a deadline");
                m.tick(t)
            }
        };
        result.expect("simulated commands are always legal");
    }
    m
}

/// Label-dependent parameters of one music period.
#[derive(Debug, Clone)]
struct PlantedTrial {
    on_ms: f64,
    off_ms: f64,
    valence_high: bool,
    arousal_high: bool,
    alpha: (f64, f64, f64),
    beta: (f64, f64, f64),
    gain: f64,
    burst_phase: f64,
}

/// Deterministic part of the synthetic physiology, shared by the
/// generator and the tests.
#[derive(Debug, Clone)]
struct Planted {
    trials: Vec<PlantedTrial>,
    spans: Vec<(f64, f64)>,
    subject_gain: f64,
    channel_gain: Vec<f64>,
    i0: Vec<[f64; 2]>,
    hr_offset: f64,
    tau_ms: f64,
}

impl Planted {
    fn new(m: &SessionMachine, p: &SignalProfile, rng: &mut ChaCha8Rng) -> Self {
        let gain_sd = Normal::new(0.0, p.subject_gain_sd.max(0.0)).expect("finite sd");
        let subject_gain = (1.0 + gain_sd.sample(rng)).max(0.5);
        let channel_gain = (0..FNIRS_CHANNELS)
            .map(|_| rng.random_range(0.6..1.4))
            .collect();
        let i0 = (0..FNIRS_CHANNELS)
            .map(|_| {
                [
                    p.intensity * rng.random_range(0.7..1.3),
                    p.intensity * rng.random_range(0.7..1.3),
                ]
            })
            .collect();
        let hr_offset = rng.random_range(-4.0..4.0);
        let trials = m
            .records()
            .iter()
            .filter_map(|r| {
                let (on_ms, off_ms) = (r.t_music_on?, r.t_music_off?);
                let (vh, ah) = match r.derived_label {
                    Some(l) => (l.valence_high, l.arousal_high),
                    None => (
                        r.music_quadrant.valence_high(),
                        r.music_quadrant.arousal_high(),
                    ),
                };
                let mut osc = |f0: f64| {
                    (
                        f0 + rng.random_range(-0.5..0.5),
                        rng.random_range(0.0..TAU),
                        rng.random_range(0.0..TAU),
                    )
                };
                Some(PlantedTrial {
                    on_ms,
                    off_ms,
                    valence_high: vh,
                    arousal_high: ah,
                    alpha: osc(10.0),
                    beta: osc(20.0),
                    gain: (1.0 + 0.1 * gain_sd.sample(rng)).max(0.5),
                    burst_phase: rng.random_range(0.0..TAU),
                })
            })
            .collect();
        let ev = m.timeline().events();
        let starts = ev
            .iter()
            .filter(|e| e.kind == EventKind::SessionStart)
            .map(|e| e.t_ms);
        let ends = ev
            .iter()
            .filter(|e| e.kind == EventKind::SessionEnd)
            .map(|e| e.t_ms);
        let lead = p.lead_s * 1000.0;
        let spans = starts
            .zip(ends)
            .map(|(s, e)| (((s - lead) / 40.0).floor() * 40.0, e + lead))
            .collect();
        Self {
            trials,
            spans,
            subject_gain,
            channel_gain,
            i0,
            hr_offset,
            tau_ms: p.response_tau_s * 1000.0,
        }
    }

    fn active(&self, t: f64) -> Option<&PlantedTrial> {
        let i = self.trials.partition_point(|x| x.on_ms <= t);
        self.trials[..i].last().filter(|x| t < x.off_ms)
    }

    /// Noise-free HbO and HbR change of channel `c` at `t`, µM.
    fn hemo(&self, c: usize, t: f64, p: &SignalProfile) -> (f64, f64) {
        let (mut o, mut r) = (0.0, 0.0);
        let end = self.trials.partition_point(|x| x.on_ms <= t);
        for x in self.trials[..end].iter().rev() {
            if t - x.off_ms > 10.0 * self.tau_ms {
                break;
            }
            let shape = if t < x.off_ms {
                1.0 - (-(t - x.on_ms) / self.tau_ms).exp()
            } else {
                (1.0 - (-(x.off_ms - x.on_ms) / self.tau_ms).exp())
                    * (-(t - x.off_ms) / self.tau_ms).exp()
            };
            let k = shape * x.gain * self.subject_gain * self.channel_gain[c];
            o += k * if x.valence_high {
                p.hbo_response_um
            } else {
                -p.hbo_response_um
            };
            r += k * if x.arousal_high {
                p.hbr_response_um
            } else {
                -p.hbr_response_um
            };
        }
        (o, r)
    }

    fn heart_rate(&self, t: f64, p: &SignalProfile) -> f64 {
        let base = match self.active(t) {
            Some(x) if x.arousal_high => p.hr_high_arousal_bpm,
            Some(_) => p.hr_low_arousal_bpm,
            None => p.hr_rest_bpm,
        };
        base + self.hr_offset
    }
}

fn quantize(x: f64, q: f64) -> f64 {
    if q > 0.0 {
        (x / q).round() * q
    } else {
        x
    }
}

fn synth_eeg(
    pl: &Planted,
    p: &SignalProfile,
    (t0, t1): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let dt = 1000.0 / EEG_RATE;
    let n = ((t1 - t0) / dt).floor() as usize;
    let noise = Normal::new(0.0, p.eeg_noise_uv.max(0.0)).expect("finite sd");
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let mut cols = vec![Vec::with_capacity(n); 3];
    let mut ar = [0.0f64; 2];
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        let s = t / 1000.0;
        let planted = pl.active(t).map_or(0.0, |x| {
            let u = (t - x.on_ms) / 1000.0;
            let burst = 0.75 + 0.25 * (TAU * 0.2 * u + x.burst_phase).sin();
            let g = burst * x.gain * pl.subject_gain;
            let mut v = 0.0;
            if x.valence_high {
                v += p.alpha_uv * g * (TAU * x.alpha.0 * u + x.alpha.1).sin();
            }
            if x.arousal_high {
                v += p.beta_uv * g * (TAU * x.beta.0 * u + x.beta.1).sin();
            }
            v
        });
        cols[0].push(t);
        for ch in 0..2 {
            ar[ch] = p.eeg_ar * ar[ch] + noise.sample(rng);
            let drift = p.drift_uv * (TAU * 0.05 * s + phases[ch]).sin();
            let mains = p.mains_uv * (TAU * 50.0 * s + phases[2 + ch]).sin();
            let scale = if ch == 0 { 1.0 } else { 0.9 };
            cols[ch + 1].push(quantize(
                ar[ch] + drift + mains + scale * planted,
                p.eeg_quantum_uv,
            ));
        }
    }
    cols
}

fn synth_fnirs(
    pl: &Planted,
    p: &SignalProfile,
    constants: &OpticalConstants,
    (t0, t1): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let dt = 1000.0 / FNIRS_RATE;
    let n = ((t1 - t0) / dt).floor() as usize;
    let noise = Normal::new(0.0, p.hb_noise_um.max(0.0)).expect("finite sd");
    let mayer_phase = rng.random_range(0.0..TAU);
    let mut cardiac_phase = rng.random_range(0.0..TAU);
    let mut cols = vec![Vec::with_capacity(n); 1 + 2 * FNIRS_CHANNELS];
    // Arterial pulsation is mostly oxygenated blood, so it shows more at
    // the HbO-weighted wavelength.
    let pulse_weight = [0.6, 1.0];
    for i in 0..n {
        let t = t0 + i as f64 * dt;
        let s = t / 1000.0;
        let f = pl.heart_rate(t, p) / 60.0 * (1.0 + 0.04 * (TAU * 0.25 * s).sin());
        cardiac_phase = (cardiac_phase + TAU * f * dt / 1000.0) % TAU;
        let pulse = p.cardiac_od * (cardiac_phase.sin() + 0.25 * (2.0 * cardiac_phase).sin());
        let mayer = p.mayer_um * (TAU * 0.1 * s + mayer_phase).sin();
        cols[0].push(t);
        for c in 0..FNIRS_CHANNELS {
            let (o, r) = pl.hemo(c, t, p);
            let hbo = o + mayer + noise.sample(rng);
            let hbr = r - 0.3 * mayer + noise.sample(rng);
            let od = constants.forward(hbo, hbr);
            for w in 0..2 {
                let v = pl.i0[c][w] * (-(od[w] + pulse_weight[w] * pulse)).exp();
                cols[1 + 2 * c + w].push(quantize(v, p.intensity_quantum));
            }
        }
    }
    cols
}

/// Simulates one participant's full study. Output is a pure function of
/// the arguments.
pub fn simulate_device(
    plan: &SessionPlan,
    paradigm: &ParadigmConfig,
    profile: &SignalProfile,
    constants: &OpticalConstants,
    seed: u64,
) -> SimulatedSession {
    let base = participant_seed(&plan.participant_id, seed);
    let machine = run_paradigm(plan, paradigm, profile, &mut rng(base, 0));
    let planted = Planted::new(&machine, profile, &mut rng(base, 1));
    let mut store = SampleStore::new();
    let mut eeg_rng = rng(base, 2);
    let mut fnirs_rng = rng(base, 3);
    for &span in &planted.spans {
        store
            .ingest_columns(
                StreamKind::Eeg,
                synth_eeg(&planted, profile, span, &mut eeg_rng),
            )
            .expect("synthetic EEG is well formed");
        store
            .ingest_columns(
                StreamKind::Fnirs,
                synth_fnirs(&planted, profile, constants, span, &mut fnirs_rng),
            )
            .expect("synthetic fNIRS is well formed");
    }
    SimulatedSession { machine, store }
}
