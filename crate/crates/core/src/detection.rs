//! Heterodyne beat synthesis and FFT read-out of echo amplitude and phase.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_DETECTION};

pub const DEFAULT_SAMPLE_RATE: f64 = 125e6;
pub const DEFAULT_WINDOW: f64 = 50e-6;
/// Bins closer than this to the target are left out of the noise floor.
pub const FLOOR_GUARD_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BeatTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub beat_frequency: f64,
    pub window: f64,
}

impl BeatTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,value\n");
        for (k, v) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{},{}", k as f64 / self.sample_rate, v);
        }
        s
    }
}

/// `2|e| cos(2 pi f t + arg e) exp(-t/decay)` plus white Gaussian noise.
/// `decay = f64::INFINITY` disables the envelope.
pub fn synthesize_beat(
    echo: Complex64,
    beat: f64,
    decay: f64,
    window: f64,
    sample_rate: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<BeatTrace> {
    if !(sample_rate > 2.0 * beat) {
        return Err(Error::Nyquist {
            sample_rate,
            frequency: beat,
        });
    }
    if !(window > 0.0) || !(decay > 0.0) || !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(
            "window and decay must be positive, noise non-negative".into(),
        ));
    }
    let n = (window * sample_rate).round() as usize;
    let amp = 2.0 * echo.norm();
    let phase = echo.arg();
    let mut samples: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 / sample_rate;
            amp * (2.0 * PI * beat * t + phase).cos() * (-t / decay).exp()
        })
        .collect();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        let mut rng = rng_for(seed, STREAM_DETECTION, 0);
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(BeatTrace {
        samples,
        sample_rate,
        beat_frequency: beat,
        window,
    })
}

/// Per-sample noise that gives the requested FFT-domain SNR for a cosine of
/// amplitude `amplitude` over `samples` points.
pub fn noise_sigma_for_snr(amplitude: f64, samples: usize, snr: f64) -> f64 {
    amplitude * (samples as f64).sqrt() / (2.0 * snr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Window {
    #[default]
    Rectangular,
    /// Five-term flat-top window.
    FlatTop,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::FlatTop => {
                const A: [f64; 5] = [
                    0.215_578_95,
                    0.416_631_58,
                    0.277_263_158,
                    0.083_578_947,
                    0.006_947_368,
                ];
                (0..n)
                    .map(|k| {
                        let x = 2.0 * PI * k as f64 / (n as f64 - 1.0).max(1.0);
                        A[0] - A[1] * x.cos() + A[2] * (2.0 * x).cos() - A[3] * (3.0 * x).cos()
                            + A[4] * (4.0 * x).cos()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPeak {
    pub frequency: f64,
    pub bin: usize,
    pub re: f64,
    pub im: f64,
    pub amplitude: f64,
    pub theta: f64,
    pub d_re: f64,
    pub d_im: f64,
    pub d_theta: f64,
    pub snr: f64,
}

impl SpectrumPeak {
    /// Complex echo amplitude the peak corresponds to.
    pub fn echo(&self) -> Complex64 {
        Complex64::new(self.re, self.im) * 0.5
    }
}

pub fn fft_peak(trace: &BeatTrace, target: f64) -> Result<SpectrumPeak> {
    fft_peak_windowed(trace, target, Window::Rectangular)
}

/// Peak at the bin nearest `target`, normalized so a bin-centered cosine of
/// amplitude A reports amplitude A. The noise floor is the RMS magnitude of
/// all positive-frequency bins at least `FLOOR_GUARD_BINS` away.
pub fn fft_peak_windowed(trace: &BeatTrace, target: f64, window: Window) -> Result<SpectrumPeak> {
    let n = trace.samples.len();
    let nyquist = 0.5 * trace.sample_rate;
    if !(target > 0.0 && target < nyquist) {
        return Err(Error::InvalidParameter(format!(
            "target {target} Hz outside (0, {nyquist}) Hz"
        )));
    }
    let resolution = trace.sample_rate / n.max(1) as f64;
    if n < 2 || target < resolution {
        return Err(Error::InvalidParameter(format!(
            "window of {n} samples cannot separate {target} Hz from DC"
        )));
    }
    let w = window.coefficients(n);
    let norm = 2.0 / w.iter().sum::<f64>();
    let mut buf: Vec<Complex64> = trace
        .samples
        .iter()
        .zip(&w)
        .map(|(s, w)| Complex64::new(s * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let bin = (target / resolution).round() as usize;
    let c = buf[bin] * norm;
    let half = n / 2;
    let (mut acc, mut count) = (0.0, 0usize);
    for (k, v) in buf.iter().enumerate().take(half).skip(1) {
        if k.abs_diff(bin) >= FLOOR_GUARD_BINS {
            acc += (v * norm).norm_sqr();
            count += 1;
        }
    }
    let rms = if count > 0 { (acc / count as f64).sqrt() } else { f64::NAN };
    let d = rms / 2f64.sqrt();
    let amplitude = c.norm();
    let mut peak = SpectrumPeak {
        frequency: bin as f64 * resolution,
        bin,
        re: c.re,
        im: c.im,
        amplitude,
        theta: c.im.atan2(c.re),
        d_re: d,
        d_im: d,
        d_theta: 0.0,
        snr: amplitude / rms,
    };
    if amplitude > 0.0 {
        peak.d_theta = phase_uncertainty(peak.re, peak.im, peak.d_re, peak.d_im);
    }
    Ok(peak)
}

/// One-sided amplitude spectrum `(frequency, |c_k|)` with the same
/// normalization as [`fft_peak_windowed`].
pub fn amplitude_spectrum(trace: &BeatTrace, window: Window) -> Vec<(f64, f64)> {
    let n = trace.samples.len();
    if n == 0 {
        return Vec::new();
    }
    let w = window.coefficients(n);
    let norm = 2.0 / w.iter().sum::<f64>();
    let mut buf: Vec<Complex64> = trace
        .samples
        .iter()
        .zip(&w)
        .map(|(s, w)| Complex64::new(s * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let resolution = trace.sample_rate / n as f64;
    buf.iter()
        .take(n / 2 + 1)
        .enumerate()
        .map(|(k, c)| (k as f64 * resolution, c.norm() * norm))
        .collect()
}

/// Classical propagation of re/im uncertainties into the phase.
pub fn phase_uncertainty(re: f64, im: f64, d_re: f64, d_im: f64) -> f64 {
    ((re * d_im).powi(2) + (im * d_re).powi(2)).sqrt() / (re * re + im * im)
}

/// Quadrant-correct phase and its uncertainty.
pub fn extract_phase(peak: &SpectrumPeak) -> Result<(f64, f64)> {
    if !(peak.re != 0.0 || peak.im != 0.0) {
        return Err(Error::UndefinedPhase);
    }
    let mut theta = peak.im.atan2(peak.re);
    if theta <= -PI {
        theta += 2.0 * PI;
    }
    Ok((theta, phase_uncertainty(peak.re, peak.im, peak.d_re, peak.d_im)))
}
