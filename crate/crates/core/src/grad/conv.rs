//! FFT-based causal convolution of per-channel kernels with batched signals.
//!
//! Signals are laid out `[batch, length, channels]`; kernels `[channels, length]`.
//! Two real sequences are transformed with one complex FFT (real part and
//! imaginary part), and spectra are kept as Hermitian halves.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Convolver {
    planner: FftPlanner<f64>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").finish_non_exhaustive()
    }
}

/// Spectra retained from the forward pass for the backward pass.
#[derive(Debug)]
pub(crate) struct ConvSpectra {
    kernel: Vec<Vec<Complex64>>,
    signal: Vec<Vec<Complex64>>,
}

pub(crate) fn fft_len(length: usize) -> usize {
    (2 * length).next_power_of_two()
}

struct Plans {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Plans {
    fn new(planner: &mut FftPlanner<f64>, length: usize) -> Self {
        let n = fft_len(length);
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            n,
            fwd,
            inv,
            buf: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Forward transforms of two zero-padded real sequences given by index
    /// closures over `0..len`.
    fn pair_fft(
        &mut self,
        len: usize,
        first: impl Fn(usize) -> f64,
        second: impl Fn(usize) -> f64,
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        for (t, z) in self.buf.iter_mut().enumerate() {
            *z = if t < len {
                Complex64::new(first(t), second(t))
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        let half = n / 2 + 1;
        let mut x1 = Vec::with_capacity(half);
        let mut x2 = Vec::with_capacity(half);
        for k in 0..half {
            let z = self.buf[k];
            let zc = self.buf[(n - k) % n].conj();
            x1.push((z + zc) * 0.5);
            let d = (z - zc) * 0.5;
            x2.push(Complex64::new(d.im, -d.re));
        }
        (x1, x2)
    }

    /// Inverse transform of two Hermitian half spectra; writes the first
    /// `len` samples of each real result.
    fn pair_ifft(&mut self, y1: &[Complex64], y2: &[Complex64], len: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let half = n / 2;
        let i = Complex64::new(0.0, 1.0);
        for k in 0..=half {
            self.buf[k] = y1[k] + i * y2[k];
        }
        for k in half + 1..n {
            self.buf[k] = y1[n - k].conj() + i * y2[n - k].conj();
        }
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / n as f64;
        self.buf[..len]
            .iter()
            .map(|z| (z.re * scale, z.im * scale))
            .unzip()
    }
}

impl Convolver {
    pub(crate) fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
        }
    }

    /// `y[b,t,h] = sum_{s<=t} kernel[h,s] * u[b,t-s,h]`.
    pub(crate) fn forward(
        &mut self,
        kernel: &[f64],
        u: &[f64],
        (batch, len, channels): (usize, usize, usize),
        keep_spectra: bool,
    ) -> (Vec<f64>, Option<ConvSpectra>) {
        let mut plans = Plans::new(&mut self.planner, len);
        let kf = kernel_spectra(&mut plans, kernel, len, channels);
        let mut y = vec![0.0; batch * len * channels];
        let signals = batch * channels;
        let mut kept = if keep_spectra {
            Vec::with_capacity(signals)
        } else {
            Vec::new()
        };
        let mut s = 0;
        while s < signals {
            let s2 = (s + 1).min(signals - 1);
            let pair = s2 != s;
            let (b1, h1) = (s / channels, s % channels);
            let (b2, h2) = (s2 / channels, s2 % channels);
            let at = |b: usize, h: usize| move |t: usize| (b * len + t) * channels + h;
            let (i1, i2) = (at(b1, h1), at(b2, h2));
            let (x1, x2) = plans.pair_fft(len, |t| u[i1(t)], |t| if pair { u[i2(t)] } else { 0.0 });
            let p1: Vec<Complex64> = x1.iter().zip(&kf[h1]).map(|(a, b)| a * b).collect();
            let p2: Vec<Complex64> = x2.iter().zip(&kf[h2]).map(|(a, b)| a * b).collect();
            let (y1, y2) = plans.pair_ifft(&p1, &p2, len);
            scatter(&mut y, &y1, i1);
            if pair {
                scatter(&mut y, &y2, i2);
            }
            if keep_spectra {
                kept.push(x1);
                if pair {
                    kept.push(x2);
                }
            }
            s += 2;
        }
        let spectra = keep_spectra.then_some(ConvSpectra {
            kernel: kf,
            signal: kept,
        });
        (y, spectra)
    }

    /// Gradients of the convolution with respect to signal and kernel.
    pub(crate) fn backward(
        &mut self,
        grad_out: &[f64],
        spectra: &ConvSpectra,
        (batch, len, channels): (usize, usize, usize),
        want_signal: bool,
        want_kernel: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let mut plans = Plans::new(&mut self.planner, len);
        let half = plans.n / 2 + 1;
        let mut du = want_signal.then(|| vec![0.0; batch * len * channels]);
        let mut acc = if want_kernel {
            vec![vec![Complex64::new(0.0, 0.0); half]; channels]
        } else {
            Vec::new()
        };
        let signals = batch * channels;
        let mut s = 0;
        while s < signals {
            let s2 = (s + 1).min(signals - 1);
            let pair = s2 != s;
            let (b1, h1) = (s / channels, s % channels);
            let (b2, h2) = (s2 / channels, s2 % channels);
            let at = |b: usize, h: usize| move |t: usize| (b * len + t) * channels + h;
            let (i1, i2) = (at(b1, h1), at(b2, h2));
            let (g1, g2) = plans.pair_fft(
                len,
                |t| grad_out[i1(t)],
                |t| if pair { grad_out[i2(t)] } else { 0.0 },
            );
            if want_kernel {
                accumulate_conj_product(&mut acc[h1], &g1, &spectra.signal[s]);
                if pair {
                    accumulate_conj_product(&mut acc[h2], &g2, &spectra.signal[s2]);
                }
            }
            if let Some(du) = du.as_mut() {
                let p1: Vec<Complex64> = g1
                    .iter()
                    .zip(&spectra.kernel[h1])
                    .map(|(g, k)| g * k.conj())
                    .collect();
                let p2: Vec<Complex64> = g2
                    .iter()
                    .zip(&spectra.kernel[h2])
                    .map(|(g, k)| g * k.conj())
                    .collect();
                let (d1, d2) = plans.pair_ifft(&p1, &p2, len);
                scatter(du, &d1, i1);
                if pair {
                    scatter(du, &d2, i2);
                }
            }
            s += 2;
        }
        let dk = want_kernel.then(|| {
            let mut dk = vec![0.0; channels * len];
            let mut h = 0;
            while h < channels {
                let h2 = (h + 1).min(channels - 1);
                let pair = h2 != h;
                let (k1, k2) = plans.pair_ifft(&acc[h], &acc[h2], len);
                dk[h * len..(h + 1) * len].copy_from_slice(&k1);
                if pair {
                    dk[h2 * len..(h2 + 1) * len].copy_from_slice(&k2);
                }
                h += 2;
            }
            dk
        });
        (du, dk)
    }
}

fn kernel_spectra(
    plans: &mut Plans,
    kernel: &[f64],
    len: usize,
    channels: usize,
) -> Vec<Vec<Complex64>> {
    let mut out = Vec::with_capacity(channels);
    let mut h = 0;
    while h < channels {
        let h2 = h + 1;
        let pair = h2 < channels;
        let (k1, k2) = plans.pair_fft(
            len,
            |t| kernel[h * len + t],
            |t| if pair { kernel[h2 * len + t] } else { 0.0 },
        );
        out.push(k1);
        if pair {
            out.push(k2);
        }
        h += 2;
    }
    out
}

fn scatter(dst: &mut [f64], src: &[f64], index: impl Fn(usize) -> usize) {
    for (t, v) in src.iter().enumerate() {
        dst[index(t)] = *v;
    }
}

fn accumulate_conj_product(acc: &mut [Complex64], g: &[Complex64], x: &[Complex64]) {
    for ((a, g), x) in acc.iter_mut().zip(g).zip(x) {
        *a += g * x.conj();
    }
}
