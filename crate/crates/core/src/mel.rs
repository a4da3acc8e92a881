//! Log-mel patch extraction for 250 ms speech segments.
//!
//! A 4000-sample segment at 16 kHz is cut into 28 Hann-windowed frames of 512
//! samples with a hop of 128 (no padding). Each frame's power spectrum is
//! projected onto 128 triangular mel filters spanning 0-8000 Hz and the
//! result is log-compressed, giving a `128 x 28` patch.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SAMPLE_RATE: usize = 16_000;
pub const PATCH_SAMPLES: usize = 4000;
pub const FFT_SIZE: usize = 512;
pub const HOP: usize = 128;
pub const MEL_BANDS: usize = 128;
pub const FRAMES: usize = (PATCH_SAMPLES - FFT_SIZE) / HOP + 1;
pub const LOG_FLOOR: f64 = 1e-10;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter `m` covers `(edges[m], edges[m + 2])` and peaks at `edges[m + 1]`.
pub fn band_edges_hz() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (MEL_BANDS + 1) as f64))
        .collect()
}

/// Filter weights, `MEL_BANDS x (FFT_SIZE / 2 + 1)`, row-major.
///
/// Each triangle is scaled by `2 / (upper - lower)` so that every filter has
/// unit area in Hz. Filters narrower than the bin spacing can end up with no
/// nonzero weights; their output is pinned at the log floor.
#[derive(Debug, Clone)]
pub struct MelFilterbank<T> {
    bins: usize,
    weights: Vec<T>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new() -> Self {
        let bins = FFT_SIZE / 2 + 1;
        let edges = band_edges_hz();
        let mut weights = vec![T::zero(); MEL_BANDS * bins];
        for m in 0..MEL_BANDS {
            let (lower, center, upper) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (upper - lower);
            for k in 0..bins {
                let f = (k * SAMPLE_RATE) as f64 / FFT_SIZE as f64;
                let rising = (f - lower) / (center - lower);
                let falling = (upper - f) / (upper - center);
                let w = rising.min(falling).max(0.0);
                weights[m * bins + k] = T::lit(w * norm);
            }
        }
        MelFilterbank { bins, weights }
    }

    pub fn band(&self, m: usize) -> &[T] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[T]) -> Vec<T> {
        (0..MEL_BANDS)
            .map(|m| {
                self.band(m)
                    .iter()
                    .zip(power)
                    .fold(T::zero(), |acc, (&w, &p)| acc + w * p)
            })
            .collect()
    }
}

impl<T: Scalar> Default for MelFilterbank<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Periodic Hann window.
pub fn hann_window<T: Scalar>(len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            T::lit(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// `MEL_BANDS x FRAMES` matrix stored band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPatch<T> {
    data: Vec<T>,
}

impl<T: Scalar> MelPatch<T> {
    pub fn shape(&self) -> (usize, usize) {
        (MEL_BANDS, self.data.len() / MEL_BANDS)
    }

    pub fn get(&self, band: usize, frame: usize) -> T {
        self.data[band * FRAMES + frame]
    }

    pub fn band(&self, band: usize) -> &[T] {
        &self.data[band * FRAMES..(band + 1) * FRAMES]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Reusable extractor holding the FFT plan, window and filterbank.
pub struct MelExtractor<T: Scalar> {
    fft: std::sync::Arc<dyn rustfft::Fft<T>>,
    window: Vec<T>,
    filterbank: MelFilterbank<T>,
}

impl<T: Scalar> MelExtractor<T> {
    pub fn new() -> Self {
        MelExtractor {
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            window: hann_window(FFT_SIZE),
            filterbank: MelFilterbank::new(),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }

    pub fn patch(&self, samples: &[T]) -> Result<MelPatch<T>> {
        if samples.len() != PATCH_SAMPLES {
            return Err(Error::domain(format!(
                "mel patch needs exactly {PATCH_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::numeric(format!("sample {i} is not finite")));
        }
        let floor = T::lit(LOG_FLOOR);
        let mut data = vec![T::zero(); MEL_BANDS * FRAMES];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); FFT_SIZE];
        for frame in 0..FRAMES {
            let start = frame * HOP;
            for (b, (&x, &w)) in buf.iter_mut().zip(samples[start..start + FFT_SIZE].iter().zip(&self.window)) {
                *b = Complex::new(x * w, T::zero());
            }
            self.fft.process(&mut buf);
            let power: Vec<T> = buf[..FFT_SIZE / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
            for (m, energy) in self.filterbank.apply(&power).into_iter().enumerate() {
                data[m * FRAMES + frame] = energy.max(floor).ln();
            }
        }
        Ok(MelPatch { data })
    }
}

impl<T: Scalar> Default for MelExtractor<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot form of [`MelExtractor::patch`].
pub fn mel_patch<T: Scalar>(samples: &[T]) -> Result<MelPatch<T>> {
    MelExtractor::new().patch(samples)
}

/// Scales signed 16-bit PCM to `[-1, 1)`.
pub fn pcm16_to_float<T: Scalar>(pcm: &[i16]) -> Vec<T> {
    pcm.iter().map(|&s| T::lit(f64::from(s) / 32768.0)).collect()
}
