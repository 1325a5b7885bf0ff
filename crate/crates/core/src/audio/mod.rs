//! Clip audio and the five structural music features.

mod chroma;
mod features;
mod pitch;
mod tempo;

pub use chroma::{
    chromagram, detect_mode, mode_from_chroma, Mode, ModeEstimate, KK_MAJOR, KK_MINOR,
};
pub use features::{
    extract_corpus, extract_features, feature_group_anova, rhythmic_articulation, scale_features,
    write_feature_csv, ClipFeatures, FeatureAnova, FeatureFlags, StructuralFeatures, FEATURE_NAMES,
};
pub use pitch::{
    interval_counts, melodic_direction, pitch_range, pitch_track, range_of, PitchRange, PitchTrack,
};
pub use tempo::{estimate_tempo, onset_envelope, TempoEstimate};

use std::io::Cursor;
use std::path::Path;

use rubato::{FftFixedIn, Resampler};

/// Sample rate every STFT-based feature runs at.
pub const ANALYSIS_RATE: u32 = 32_000;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("audio clip is empty")]
    Empty,
    #[error("clip is {actual_s:.2} s long, need at least {required_s} s")]
    TooShort { actual_s: f64, required_s: f64 },
    #[error("invalid sample rate {0}")]
    SampleRate(u32),
    #[error("clip is silent; chroma is undefined")]
    Silent,
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("resampling failed: {0}")]
    Resample(String),
}

/// Mono PCM audio, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::SampleRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn require_duration(&self, seconds: f64) -> Result<(), AudioError> {
        if self.samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if self.duration_s() + 1e-9 < seconds {
            return Err(AudioError::TooShort {
                actual_s: self.duration_s(),
                required_s: seconds,
            });
        }
        Ok(())
    }

    /// Decodes 16/24/32-bit integer or 32-bit float WAV, averaging channels.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self, AudioError> {
        Self::decode(hound::WavReader::new(Cursor::new(bytes))?)
    }

    pub fn read_wav(path: &Path) -> Result<Self, AudioError> {
        Self::decode(hound::WavReader::open(path)?)
    }

    fn decode<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<Self, AudioError> {
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()?,
            (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
                let scale = (1i64 << (bits - 1)) as f64;
                reader
                    .into_samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<Result<_, _>>()?
            }
            (fmt, bits) => return Err(AudioError::Format(format!("{fmt:?} {bits}-bit"))),
        };
        let samples = interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
            .collect();
        Self::new(samples, spec.sample_rate)
    }

    /// Encodes as mono 32-bit float WAV.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>, AudioError> {
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, wav_spec(self.sample_rate))?;
            for &s in &self.samples {
                writer.write_sample(s as f32)?;
            }
            writer.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        let mut writer = hound::WavWriter::create(path, wav_spec(self.sample_rate))?;
        for &s in &self.samples {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// Band-limited resampling to `rate`. Returns a clone when already there.
    pub fn resampled(&self, rate: u32) -> Result<AudioClip, AudioError> {
        if rate == 0 {
            return Err(AudioError::SampleRate(rate));
        }
        if rate == self.sample_rate || self.samples.is_empty() {
            return Ok(AudioClip {
                samples: self.samples.clone(),
                sample_rate: rate,
            });
        }
        let chunk = 1024;
        let mut resampler =
            FftFixedIn::<f64>::new(self.sample_rate as usize, rate as usize, chunk, 2, 1)
                .map_err(|e| AudioError::Resample(e.to_string()))?;
        let delay = resampler.output_delay();
        let expected =
            (self.samples.len() as f64 * rate as f64 / self.sample_rate as f64).round() as usize;
        let mut out: Vec<f64> = Vec::with_capacity(expected + delay + chunk);
        let mut pos = 0;
        while pos < self.samples.len() {
            let need = resampler.input_frames_next();
            let end = (pos + need).min(self.samples.len());
            let block = [&self.samples[pos..end]];
            let res = if end - pos == need {
                resampler.process(&block, None)
            } else {
                resampler.process_partial(Some(&block), None)
            }
            .map_err(|e| AudioError::Resample(e.to_string()))?;
            out.extend_from_slice(&res[0]);
            pos = end;
        }
        while out.len() < expected + delay {
            let res = resampler
                .process_partial::<&[f64]>(None, None)
                .map_err(|e| AudioError::Resample(e.to_string()))?;
            if res[0].is_empty() {
                break;
            }
            out.extend_from_slice(&res[0]);
        }
        let mut samples: Vec<f64> = out.into_iter().skip(delay).take(expected).collect();
        samples.resize(expected, 0.0);
        Ok(AudioClip {
            samples,
            sample_rate: rate,
        })
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes (bins `0..=n_fft/2`), frames without
/// padding.
pub(crate) fn stft_magnitudes(x: &[f64], n_fft: usize, hop: usize) -> Vec<Vec<f64>> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let window = hann(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut frames = Vec::new();
    let mut start = 0;
    while start + n_fft <= x.len() {
        for ((b, s), w) in buf.iter_mut().zip(&x[start..start + n_fft]).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..=n_fft / 2].iter().map(|c| c.norm()).collect());
        start += hop;
    }
    frames
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let clip = AudioClip::new(synth::sine(440.0, 0.25, 0.5, 16_000), 16_000).unwrap();
        let bytes = clip.to_wav_bytes().unwrap();
        let back = AudioClip::from_wav_bytes(&bytes).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn stereo_int_wav_is_downmixed() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..10 {
                w.write_sample(16384i16).unwrap();
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
        }
        let clip = AudioClip::from_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(clip.samples.len(), 10);
        assert!((clip.samples[3] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn resampling_preserves_tone() {
        let clip = AudioClip::new(synth::sine(1000.0, 0.5, 1.0, 44_100), 44_100).unwrap();
        let out = clip.resampled(ANALYSIS_RATE).unwrap();
        assert_eq!(out.samples.len(), 32_000);
        let reference = synth::sine(1000.0, 0.5, 1.0, ANALYSIS_RATE);
        // Ignore edge transients.
        let err = out.samples[2000..30_000]
            .iter()
            .zip(&reference[2000..30_000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "max error {err}");
    }
}
