//! Rational-ratio polyphase resampling with a Hann-windowed sinc kernel.

use super::Waveform;

/// Zero crossings of the sinc kernel on each side of its center.
pub const ZERO_CROSSINGS: usize = 32;

// phase tables above this size are computed per output sample instead
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Converts between two fixed rates. Output sample `n` sits at input time
/// `n * down / up`; the kernel cutoff is the lower of the two Nyquist rates.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: u64,
    down: u64,
    cutoff: f64,
    half_taps: usize,
    // taps[phase][j] weights input offset j - (half_taps - 1) from the floor position
    table: Option<Vec<Vec<f64>>>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Self {
        assert!(source_rate > 0 && target_rate > 0, "rates must be positive");
        let g = gcd(source_rate as u64, target_rate as u64);
        let (up, down) = (target_rate as u64 / g, source_rate as u64 / g);
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half_taps = (ZERO_CROSSINGS as f64 / cutoff).ceil() as usize + 1;
        let mut r = Self {
            up,
            down,
            cutoff,
            half_taps,
            table: None,
        };
        if (up as usize) <= MAX_TABLE_PHASES {
            let table = (0..up).map(|p| r.taps(p as f64 / up as f64)).collect();
            r.table = Some(table);
        }
        r
    }

    fn kernel(&self, tau: f64) -> f64 {
        let width = ZERO_CROSSINGS as f64 / self.cutoff;
        if tau.abs() >= width {
            return 0.0;
        }
        let x = self.cutoff * tau;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let window = 0.5 * (1.0 + (std::f64::consts::PI * tau / width).cos());
        self.cutoff * sinc * window
    }

    fn taps(&self, frac: f64) -> Vec<f64> {
        let h = self.half_taps as isize;
        (-(h - 1)..=h).map(|d| self.kernel(frac - d as f64)).collect()
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let h = self.half_taps as isize;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as isize;
            let phase = (pos % self.up) as usize;
            let taps: &[f64] = match &self.table {
                Some(t) => &t[phase],
                None => {
                    scratch = self.taps(phase as f64 / self.up as f64);
                    &scratch
                }
            };
            let first = base - (h - 1);
            let mut acc = 0.0;
            for (j, w) in taps.iter().enumerate() {
                let k = first + j as isize;
                if k >= 0 && (k as usize) < input.len() {
                    acc += w * input[k as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

/// Resamples to `target_rate`; identity when the rates already agree.
/// Output length is `round(N * target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Waveform {
    if w.sample_rate() == target_rate {
        return w.clone();
    }
    let out = Resampler::new(w.sample_rate(), target_rate).process(w.samples());
    Waveform::new(out, target_rate).expect("finite input gives finite output")
}
