//! Polyphase Kaiser-windowed sinc resampling at a rational ratio.

use std::f64::consts::PI;

const KAISER_BETA: f64 = 8.6;
/// Zero crossings of the sinc kernel covered per output-rate period.
const TAPS_PER_PHASE: f64 = 32.0;
const MAX_DENOMINATOR: u64 = 1000;

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` with `up / down == target / source` and
/// `down <= 1000`, or `None` if no such fraction is close enough.
pub fn rational_ratio(target: f64, source: f64) -> Option<(u64, u64)> {
    let r = target / source;
    if !(r.is_finite() && r > 0.0) {
        return None;
    }
    (1..=MAX_DENOMINATOR).find_map(|q| {
        let p = (r * q as f64).round();
        if p >= 1.0 && p < 1e12 && (p / q as f64 - r).abs() <= 1e-9 * r {
            let p = p as u64;
            let g = gcd(p, q);
            Some((p / g, q / g))
        } else {
            None
        }
    })
}

/// Polyphase filter bank: one normalised row of taps per output phase.
struct Bank {
    reach: i64,
    rows: Vec<Vec<f64>>,
}

impl Bank {
    fn new(up: u64, down: u64) -> Self {
        let scale = (up as f64 / down as f64).min(1.0);
        let half_width = TAPS_PER_PHASE / 2.0 / scale;
        let reach = half_width.ceil() as i64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let rows = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut row: Vec<f64> = (-reach..=reach)
                    .map(|j| {
                        let d = frac - j as f64;
                        if d.abs() >= half_width {
                            return 0.0;
                        }
                        let x = scale * d;
                        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                        let r = d / half_width;
                        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                        scale * sinc * window
                    })
                    .collect();
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|w| *w /= sum);
                row
            })
            .collect();
        Self { reach, rows }
    }
}

fn reflect(k: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = k.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Resamples one channel by `up / down`. Output length is
/// `round(len * up / down)`; samples beyond the edges are mirrored.
pub fn resample_channel(x: &[f64], up: u64, down: u64) -> Vec<f64> {
    if up == down {
        return x.to_vec();
    }
    let n = x.len();
    let out_len = ((n as u128 * up as u128 * 2 + down as u128) / (2 * down as u128)) as usize;
    if n == 0 {
        return Vec::new();
    }
    let bank = Bank::new(up, down);
    (0..out_len as u64)
        .map(|m| {
            let pos = m as u128 * down as u128;
            let base = (pos / up as u128) as i64;
            let row = &bank.rows[(pos % up as u128) as usize];
            row.iter()
                .zip(-bank.reach..=bank.reach)
                .map(|(w, j)| w * x[reflect(base + j, n as i64)])
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(rational_ratio(200.0, 256.0), Some((25, 32)));
        assert_eq!(rational_ratio(2048.0, 32.0), Some((64, 1)));
        assert_eq!(rational_ratio(44100.0, 48000.0), Some((147, 160)));
        assert_eq!(rational_ratio(100.0, 100.0), Some((1, 1)));
        assert_eq!(rational_ratio(std::f64::consts::PI, 1.0), None);
        assert_eq!(rational_ratio(0.0, 1.0), None);
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(8.6) - 750.461_159_563_165_9).abs() < 1e-9);
    }

    #[test]
    fn output_lengths() {
        let x = vec![0.0; 1000];
        assert_eq!(resample_channel(&x, 25, 32).len(), 781);
        assert_eq!(resample_channel(&x, 3, 1).len(), 3000);
        assert_eq!(resample_channel(&[1.0; 3], 1, 2).len(), 2);
    }

    #[test]
    fn constant_is_preserved() {
        let x = vec![2.5; 300];
        for v in resample_channel(&x, 3, 7) {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-7, 1), 0);
    }
}
