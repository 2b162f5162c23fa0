//! Differentiable stochastic channel: power normalization, AWGN, and
//! Rayleigh block fading with zero-forcing equalization under perfect CSI.
//!
//! Complex signals are stored interleaved `(re0, im0, re1, im1, ...)`.
//! Noise and fading gain are sampled independently of the transmitted
//! signal, so the equalized output is `z + n/c` and its Jacobian with
//! respect to `z` is the identity.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Fading gains below this magnitude are redrawn.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Awgn,
    SlowFading,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::SlowFading => "rayleigh",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" | "slow_fading" | "fading" => Ok(ChannelKind::SlowFading),
            other => Err(Error::invalid(format!("unknown channel `{other}`"))),
        }
    }
}

/// Signal-to-noise ratio; `Infinite` is the noiseless sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Db(f64),
    Infinite,
}

impl Snr {
    pub fn noise_power(self) -> f64 {
        match self {
            Snr::Db(db) => snr_to_noise_power(db),
            Snr::Infinite => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Snr::Infinite)
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Db(db) => write!(f, "{db}"),
            Snr::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") {
            return Ok(Snr::Infinite);
        }
        let db: f64 = s.parse().map_err(|_| Error::invalid(format!("bad SNR `{s}`")))?;
        if !db.is_finite() {
            return Err(Error::invalid(format!("SNR must be finite or `inf`, got `{s}`")));
        }
        Ok(Snr::Db(db))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr: Snr,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, snr: Snr, seed: u64) -> Self {
        Self { kind, snr, seed }
    }

    pub fn noiseless(kind: ChannelKind) -> Self {
        Self { kind, snr: Snr::Infinite, seed: 0 }
    }

    pub fn with_snr(self, snr: Snr) -> Self {
        Self { snr, ..self }
    }
}

/// Block of `s` complex symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexBlock {
    data: Vec<f64>,
}

impl ComplexBlock {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(2) {
            return Err(Error::shape("complex_block", format!("{} reals is not 2s with s >= 1", data.len())));
        }
        Ok(Self { data })
    }

    pub fn zeros(symbols: usize) -> Self {
        Self { data: vec![0.0; 2 * symbols] }
    }

    pub fn symbols(&self) -> usize {
        self.data.len() / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn symbol(&self, i: usize) -> (f64, f64) {
        (self.data[2 * i], self.data[2 * i + 1])
    }

    /// `(1/s)·Σ|z_i|²`
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.symbols() as f64
    }
}

/// Sampled channel state for one block: fading gain (if any) and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub gain: Option<(f64, f64)>,
    pub noise: ComplexBlock,
    /// Number of fading draws rejected for `|c| < MIN_GAIN`.
    pub redraws: u32,
}

impl ChannelRealization {
    /// Noise as seen after equalization, `n / c` (or `n` without fading).
    pub fn effective_noise(&self) -> Vec<f64> {
        match self.gain {
            None => self.noise.data().to_vec(),
            Some((cr, ci)) => {
                let d = cr * cr + ci * ci;
                self.noise
                    .data()
                    .chunks(2)
                    .flat_map(|n| [(n[0] * cr + n[1] * ci) / d, (n[1] * cr - n[0] * ci) / d])
                    .collect()
            }
        }
    }

    /// Equalized received block for transmitted `z`.
    pub fn apply(&self, z: &ComplexBlock) -> ComplexBlock {
        let data = z.data().iter().zip(self.effective_noise()).map(|(a, n)| a + n).collect();
        ComplexBlock { data }
    }

    /// Faded, noisy block before equalization: `c·z + n`.
    pub fn received(&self, z: &ComplexBlock) -> ComplexBlock {
        let (cr, ci) = self.gain.unwrap_or((1.0, 0.0));
        let data = z
            .data()
            .chunks(2)
            .zip(self.noise.data().chunks(2))
            .flat_map(|(z, n)| [cr * z[0] - ci * z[1] + n[0], cr * z[1] + ci * z[0] + n[1]])
            .collect();
        ComplexBlock { data }
    }
}

/// `σ² = 10^(−snr_db/10)` for unit signal power.
pub fn snr_to_noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Scale `2s` reals so the `s` complex symbols have unit average power.
pub fn normalize_power(raw: &[f64], symbols: usize) -> Result<ComplexBlock> {
    if symbols == 0 || raw.len() != 2 * symbols {
        return Err(Error::shape("normalize_power", format!("{} reals for {symbols} symbols", raw.len())));
    }
    let energy: f64 = raw.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::ZeroPower);
    }
    let k = (symbols as f64).sqrt() / energy.sqrt();
    Ok(ComplexBlock { data: raw.iter().map(|v| v * k).collect() })
}

/// Draw one block's channel state.
pub fn sample_realization<R: Rng + ?Sized>(
    symbols: usize,
    kind: ChannelKind,
    snr: Snr,
    rng: &mut R,
) -> ChannelRealization {
    let mut redraws = 0;
    let gain = match kind {
        ChannelKind::Awgn => None,
        ChannelKind::SlowFading => loop {
            let cr: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
            let ci: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
            if (cr * cr + ci * ci).sqrt() >= MIN_GAIN {
                break Some((cr, ci));
            }
            redraws += 1;
        },
    };
    let noise = match snr {
        Snr::Infinite => ComplexBlock::zeros(symbols),
        Snr::Db(db) => {
            let sd = (snr_to_noise_power(db) / 2.0).sqrt();
            ComplexBlock {
                data: (0..2 * symbols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect(),
            }
        }
    };
    ChannelRealization { gain, noise, redraws }
}

/// Send one power-normalized block through the channel.
pub fn transmit<R: Rng + ?Sized>(
    z: &ComplexBlock,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> (ComplexBlock, ChannelRealization) {
    let real = sample_realization(z.symbols(), cfg.kind, cfg.snr, rng);
    (real.apply(z), real)
}

/// Channel realizations for a batch of blocks, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRealization {
    pub blocks: Vec<ChannelRealization>,
    symbols: usize,
}

impl BatchRealization {
    pub fn sample<R: Rng + ?Sized>(batch: usize, symbols: usize, kind: ChannelKind, snr: Snr, rng: &mut R) -> Self {
        let blocks = (0..batch).map(|_| sample_realization(symbols, kind, snr, rng)).collect();
        Self { blocks, symbols }
    }

    /// `[N, 2s]` tensor of equalized noise.
    pub fn effective_noise(&self) -> Tensor {
        let data = self.blocks.iter().flat_map(|b| b.effective_noise()).collect();
        Tensor::new(vec![self.blocks.len(), 2 * self.symbols], data).expect("batch realization shape")
    }

    /// Record `ẑ = z + n/c` on the tape; gradient passes straight through.
    pub fn apply(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let noise = self.effective_noise();
        if tape.shape(z) != noise.shape() {
            return Err(Error::shape("transmit", format!("{:?} vs realization {:?}", tape.shape(z), noise.shape())));
        }
        let n = tape.constant(noise);
        tape.add(z, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_power_conversion() {
        assert_eq!(snr_to_noise_power(0.0), 1.0);
        assert!((snr_to_noise_power(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_power(20.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let z = normalize_power(&[3.0, 4.0], 1).unwrap();
        assert!((z.data()[0] - 0.6).abs() < 1e-15 && (z.data()[1] - 0.8).abs() < 1e-15);
        let z = normalize_power(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(z.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(normalize_power(&[0.0; 4], 2), Err(Error::ZeroPower)));
        assert!(normalize_power(&[1.0; 3], 2).is_err());
    }

    #[test]
    fn noiseless_channels_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = normalize_power(&[0.3, -1.2, 0.5, 2.0, -0.7, 0.1], 3).unwrap();
        for kind in [ChannelKind::Awgn, ChannelKind::SlowFading] {
            let (zh, real) = transmit(&z, &ChannelConfig::noiseless(kind), &mut rng);
            assert_eq!(zh, z);
            assert_eq!(real.gain.is_some(), kind == ChannelKind::SlowFading);
        }
    }

    #[test]
    fn equalization_undoes_the_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = normalize_power(&[0.3, -1.2, 0.5, 2.0], 2).unwrap();
        let real = sample_realization(2, ChannelKind::SlowFading, Snr::Db(5.0), &mut rng);
        let (cr, ci) = real.gain.unwrap();
        let y = real.received(&z);
        let d = cr * cr + ci * ci;
        let eq: Vec<f64> = y
            .data()
            .chunks(2)
            .flat_map(|v| [(v[0] * cr + v[1] * ci) / d, (v[1] * cr - v[0] * ci) / d])
            .collect();
        for (a, b) in eq.iter().zip(real.apply(&z).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_realizations_repeat() {
        let cfg = ChannelConfig::new(ChannelKind::SlowFading, Snr::Db(3.0), 11);
        let z = normalize_power(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let a = transmit(&z, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let b = transmit(&z, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        assert_eq!(a, b);
    }

    #[test]
    fn snr_parsing() {
        assert_eq!("inf".parse::<Snr>().unwrap(), Snr::Infinite);
        assert_eq!("-2".parse::<Snr>().unwrap(), Snr::Db(-2.0));
        assert!("nan".parse::<Snr>().is_err());
        assert_eq!("rayleigh".parse::<ChannelKind>().unwrap(), ChannelKind::SlowFading);
    }
}
