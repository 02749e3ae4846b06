use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::Constellation;
use crate::{Error, Result};

/// Conventional Gray-labelled modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Psk(usize),
    Qam(usize),
}

impl Modulation {
    pub fn constellation(&self) -> Result<Constellation> {
        match *self {
            Modulation::Psk(m) => Constellation::psk(m),
            Modulation::Qam(m) => Constellation::qam(m),
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            Modulation::Psk(m) | Modulation::Qam(m) => m,
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Modulation::Psk(2) => write!(f, "bpsk"),
            Modulation::Psk(m) => write!(f, "psk{m}"),
            Modulation::Qam(m) => write!(f, "qam{m}"),
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;

    /// Accepts `bpsk`, `pskM` and `qamM`.
    fn from_str(s: &str) -> Result<Self> {
        let lower: String = s.trim().to_ascii_lowercase();
        let bad = || Error::Config(format!("unknown modulation '{s}' (use bpsk, pskM or qamM)"));
        let parsed = if lower == "bpsk" {
            Modulation::Psk(2)
        } else if let Some(m) = lower.strip_prefix("psk") {
            Modulation::Psk(m.parse().map_err(|_| bad())?)
        } else if let Some(m) = lower.strip_prefix("qam") {
            Modulation::Qam(m.parse().map_err(|_| bad())?)
        } else {
            return Err(bad());
        };
        parsed.constellation()?;
        Ok(parsed)
    }
}

/// Exact max-log bit LLRs, MSB-first per symbol:
/// `(min_{s: bit=1} |y − h s|² − min_{s: bit=0} |y − h s|²) / (2σ²)`.
pub fn max_log_llrs(y: &[f64], h: &[f64], noise_variance: f64, cons: &Constellation) -> Result<Vec<f64>> {
    if y.len() != h.len() || y.len() % 2 != 0 {
        return Err(Error::Length {
            expected: y.len(),
            actual: h.len(),
        });
    }
    if !(noise_variance > 0.0) {
        return Err(Error::Input(format!("noise variance must be positive, got {noise_variance}")));
    }
    let (m, bps) = (cons.order(), cons.bits_per_symbol());
    let scale = 1.0 / (2.0 * noise_variance);
    let mut out = Vec::with_capacity(y.len() / 2 * bps);
    let mut dist = vec![0.0; m];
    for i in 0..y.len() / 2 {
        let (yr, yi, hr, hi) = (y[2 * i], y[2 * i + 1], h[2 * i], h[2 * i + 1]);
        for (k, d) in dist.iter_mut().enumerate() {
            let (sr, si) = cons.point(k);
            let er = yr - (hr * sr - hi * si);
            let ei = yi - (hr * si + hi * sr);
            *d = er * er + ei * ei;
        }
        for b in (0..bps).rev() {
            let (mut d0, mut d1) = (f64::INFINITY, f64::INFINITY);
            for (k, &d) in dist.iter().enumerate() {
                if (k >> b) & 1 == 1 {
                    d1 = d1.min(d);
                } else {
                    d0 = d0.min(d);
                }
            }
            out.push(scale * (d1 - d0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_closed_form() {
        let c = Constellation::psk(2).unwrap();
        let sigma2 = 0.3;
        for y in [-1.3, -0.2, 0.0, 0.7, 2.5] {
            let l = max_log_llrs(&[y, 0.4], &[1.0, 0.0], sigma2, &c).unwrap();
            assert!((l[0] - 2.0 * y / sigma2).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_psk8_signs_reproduce_labels() {
        let c = Constellation::psk(8).unwrap();
        for k in 0..8 {
            let (re, im) = c.point(k);
            let l = max_log_llrs(&[re, im], &[1.0, 0.0], 0.1, &c).unwrap();
            let bits: Vec<usize> = l.iter().map(|&v| usize::from(v < 0.0)).collect();
            let label = bits.iter().fold(0, |acc, &b| (acc << 1) | b);
            assert_eq!(label, k);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("psk8".parse::<Modulation>().unwrap(), Modulation::Psk(8));
        assert_eq!("QAM16".parse::<Modulation>().unwrap(), Modulation::Qam(16));
        assert_eq!("bpsk".parse::<Modulation>().unwrap(), Modulation::Psk(2));
        assert!("qam2".parse::<Modulation>().is_err());
        assert!("fsk4".parse::<Modulation>().is_err());
        assert_eq!(Modulation::Psk(2).to_string(), "bpsk");
    }
}
