//! IIR filter design and zero-phase application with second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

/// One second-order section, `a[0]` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Response at `z = e^{jω}`, `omega` in radians per sample.
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Direct form II transposed state for a constant input `u`.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let s2 = self.b[2] * u - self.a[2] * y;
        let s1 = self.b[1] * u - self.a[1] * y + s2;
        [s1, s2]
    }
}

/// Cascade response magnitude at `freq` Hz.
pub fn magnitude(sections: &[Biquad], freq: f64, sampling_rate: f64) -> f64 {
    let omega = 2.0 * PI * freq / sampling_rate;
    sections.iter().map(|s| s.response(omega)).product::<Complex64>().norm()
}

/// Butterworth bandpass with `order` poles (a prototype of order `order / 2`),
/// bilinear transform with pre-warped band edges, unity gain at the centre.
/// Callers validate `0 < low < high < fs / 2` and that `order` is even.
pub fn butterworth_bandpass(low: f64, high: f64, order: usize, sampling_rate: f64) -> Vec<Biquad> {
    let n = order / 2;
    let fs2 = 2.0 * sampling_rate;
    let w1 = fs2 * (PI * low / sampling_rate).tan();
    let w2 = fs2 * (PI * high / sampling_rate).tan();
    let w0_sq = w1 * w2;
    let bw = w2 - w1;

    let mut upper = Vec::new();
    let mut real = Vec::new();
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let root = (p * p - w0_sq).sqrt();
        for s in [p + root, p - root] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im > 1e-12 {
                upper.push(z);
            } else if z.im.abs() <= 1e-12 {
                real.push(z.re);
            }
        }
    }
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|z| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * z.re, z.norm_sqr()],
        })
        .chain(real.chunks(2).map(|r| {
            let (r1, r2) = (r[0], *r.get(1).unwrap_or(&0.0));
            Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(r1 + r2), r1 * r2],
            }
        }))
        .collect();

    let centre = 2.0 * (w0_sq.sqrt() / fs2).atan();
    for s in &mut sections {
        let g = 1.0 / s.response(centre).norm();
        s.b.iter_mut().for_each(|b| *b *= g);
    }
    sections
}

/// Second-order notch at `freq` Hz with quality factor `q`.
pub fn notch(freq: f64, q: f64, sampling_rate: f64) -> Biquad {
    let w0 = 2.0 * PI * freq / sampling_rate;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let c = w0.cos();
    Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
    }
}

fn filter_in_place(sections: &[Biquad], x: &mut [f64], initial: f64) {
    let mut u = initial;
    for s in sections {
        let [mut s1, mut s2] = s.steady_state(u);
        u *= s.dc_gain();
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + s1;
            s1 = s.b[1] * input - s.a[1] * y + s2;
            s2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd reflective padding of `padlen`
/// samples on each side and steady-state initial conditions.
pub fn filtfilt(sections: &[Biquad], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n < 2 || sections.is_empty() {
        return x.to_vec();
    }
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let first = ext[0];
    filter_in_place(sections, &mut ext, first);
    ext.reverse();
    let first = ext[0];
    filter_in_place(sections, &mut ext, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic Butterworth bandpass magnitude on the pre-warped axis.
    fn analytic_bandpass(f: f64, low: f64, high: f64, order: usize, fs: f64) -> f64 {
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w, w1, w2) = (warp(f), warp(low), warp(high));
        let ratio = (w * w - w1 * w2) / (w * (w2 - w1));
        (1.0 / (1.0 + ratio.powi(order as i32))).sqrt()
    }

    #[test]
    fn bandpass_matches_analytic_response() {
        for &(low, high, order, fs) in &[(1.0, 40.0, 4, 256.0), (0.5, 30.0, 6, 200.0), (8.0, 12.0, 8, 1000.0), (1.0, 40.0, 2, 256.0)] {
            let sos = butterworth_bandpass(low, high, order, fs);
            assert_eq!(sos.len(), order / 2);
            for i in 1..100 {
                let f = fs / 2.0 * i as f64 / 100.0;
                let got = magnitude(&sos, f, fs);
                let want = analytic_bandpass(f, low, high, order, fs);
                assert!((got - want).abs() < 1e-9, "f={f} got={got} want={want}");
            }
        }
    }

    #[test]
    fn bandpass_is_stable() {
        for s in butterworth_bandpass(0.1, 100.0, 10, 2048.0) {
            // both poles inside the unit circle
            assert!(s.a[2].abs() < 1.0 && s.a[1].abs() < 1.0 + s.a[2]);
        }
    }

    #[test]
    fn notch_zero_at_centre_unity_far_away() {
        let s = notch(50.0, 30.0, 256.0);
        assert!(magnitude(&[s], 50.0, 256.0) < 1e-12);
        assert!((magnitude(&[s], 10.0, 256.0) - 1.0).abs() < 2e-3);
        assert!((magnitude(&[s], 0.0, 256.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filtfilt_constant_through_allpass_dc() {
        let s = notch(50.0, 30.0, 256.0);
        let out = filtfilt(&[s], &[3.0; 64], 6);
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn filtfilt_short_inputs() {
        let s = notch(50.0, 30.0, 256.0);
        assert!(filtfilt(&[s], &[], 6).is_empty());
        assert_eq!(filtfilt(&[s], &[1.5], 6), vec![1.5]);
        assert_eq!(filtfilt(&[s], &[1.0, 2.0, 3.0], 6).len(), 3);
    }
}
