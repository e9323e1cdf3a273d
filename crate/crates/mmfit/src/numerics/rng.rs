//! Reproducible random number streams and multinomial sampling.
//!
//! The generator is PCG (XSL-RR 128/64) with the stream id mapped to the
//! sequence increment, so every `(seed, stream)` pair is an independent,
//! bit-reproducible stream. Simulation replications each get their own
//! stream id, which makes results independent of scheduling.

use super::{ln_gamma, NumericsError};

const PCG_MULT: u128 = 0x2360_ed05_1fc6_5da4_4385_df64_9fcc_f645;

/// A deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u128,
    inc: u128,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let inc = ((stream as u128) << 1) | 1;
        let mut rng = Self {
            state: 0,
            inc,
            seed,
            stream,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(seed as u128);
        rng.step();
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    fn step(&mut self) {
        self.state = self.state.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.step();
        let rot = (self.state >> 122) as u32;
        let xsl = ((self.state >> 64) as u64) ^ (self.state as u64);
        xsl.rotate_right(rot)
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }
}

/// Draws a multinomial count vector by sequential binomial conditioning.
///
/// Requires a strictly positive probability vector summing to one within
/// 1e-12; a boundary or unnormalized vector is a caller error.
pub fn multinomial_draw(
    n: u64,
    pi: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<u64>, NumericsError> {
    if pi.is_empty() {
        return Err(NumericsError::Domain("empty probability vector".into()));
    }
    if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(NumericsError::Domain(
            "multinomial probabilities must be strictly positive".into(),
        ));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(NumericsError::Domain(format!(
            "multinomial probabilities must sum to 1 (off by {:.3e})",
            total - 1.0
        )));
    }
    let r = pi.len();
    let mut y = vec![0u64; r];
    let mut remaining = n;
    let mut tail = total;
    for j in 0..r - 1 {
        if remaining == 0 {
            break;
        }
        let cond = (pi[j] / tail).clamp(0.0, 1.0);
        let d = binomial_draw(remaining, cond, rng);
        y[j] = d;
        remaining -= d;
        tail -= pi[j];
    }
    y[r - 1] = remaining;
    Ok(y)
}

/// Inverse-CDF binomial draw enumerated outward from the mode.
///
/// Starting at the mode keeps the enumeration length at O(sqrt(n p (1-p)))
/// and avoids the underflow of the usual walk from zero when n is large.
fn binomial_draw(n: u64, p: f64, rng: &mut RngStream) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n == 0 {
        return 0;
    }
    let nf = n as f64;
    let mode = (((nf + 1.0) * p).floor() as u64).min(n);
    let mf = mode as f64;
    let log_pmf_mode = ln_gamma(nf + 1.0) - ln_gamma(mf + 1.0) - ln_gamma(nf - mf + 1.0)
        + mf * p.ln()
        + (nf - mf) * (1.0 - p).ln();
    let f_mode = log_pmf_mode.exp();

    let u = rng.uniform();
    let odds = p / (1.0 - p);

    let mut cum = f_mode;
    if u <= cum {
        return mode;
    }
    // Alternate right and left of the mode with the pmf recurrences.
    let mut right = mode;
    let mut left = mode;
    let mut f_right = f_mode;
    let mut f_left = f_mode;
    loop {
        let mut advanced = false;
        if right < n {
            f_right *= odds * (nf - right as f64) / (right as f64 + 1.0);
            right += 1;
            cum += f_right;
            advanced = true;
            if u <= cum {
                return right;
            }
        }
        if left > 0 {
            f_left *= (left as f64) / (odds * (nf - left as f64 + 1.0));
            left -= 1;
            cum += f_left;
            advanced = true;
            if u <= cum {
                return left;
            }
        }
        if !advanced {
            // Rounding left a sliver of mass unaccounted; the mode is the
            // deterministic fallback.
            return mode;
        }
    }
}
