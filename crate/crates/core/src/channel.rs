//! Quasi-static Rayleigh block-fading link with finite-blocklength packet
//! errors and a discrete-uniform delay.
//!
//! Every transmission consumes exactly one uniform from the loss stream (plus
//! two more for the fading sample in [`PerMode::InstantaneousFading`]) and one
//! delay draw from the delay stream, lost or not. Realizations for one link are
//! therefore independent of what the rest of the loop does.

use std::f64::consts::{E, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, InvalidArgument};

/// How the per-packet SNR fed to the error model is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerMode {
    /// Evaluate the error probability once at the mean SNR.
    #[default]
    AnalyticMeanSnr,
    /// Draw a Rayleigh gain per block and evaluate at the instantaneous SNR.
    InstantaneousFading,
}

/// Static description of one wireless link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Mean SNR in dB. `inf` gives a lossless link.
    pub snr_db: f64,
    /// Largest delay in sampling slots.
    pub max_delay_slots: u32,
    /// Codeword length in bits.
    pub block_length: u32,
    pub code_rate: f64,
    #[serde(default)]
    pub per_mode: PerMode,
}

impl LinkConfig {
    pub fn new(snr_db: f64, max_delay_slots: u32) -> Self {
        Self { snr_db, max_delay_slots, block_length: 100, code_rate: 1.0, per_mode: PerMode::default() }
    }

    /// A link that never drops and never delays.
    pub fn perfect() -> Self {
        Self::new(f64::INFINITY, 0)
    }

    /// Linear mean SNR.
    pub fn gamma(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(ConfigError::new(format!("{prefix}.snr_db"), "must be a number or inf"));
        }
        if self.block_length < 1 {
            return Err(ConfigError::new(format!("{prefix}.block_length"), "must be >= 1"));
        }
        if !(self.code_rate > 0.0) || !self.code_rate.is_finite() {
            return Err(ConfigError::new(format!("{prefix}.code_rate"), "must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDraw {
    pub lost: bool,
    pub delay_slots: u32,
}

/// One block's complex channel gain, as amplitude and phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingSample {
    pub beta: f64,
    pub phi: f64,
}

/// Rayleigh scale giving `E[beta^2] = 1`, so the configured SNR is the mean.
pub const UNIT_POWER_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Terms of the finite-blocklength error expansion before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerBreakdown {
    /// Outage term `1 - exp(-(e^R + 1)/gamma)`.
    pub outage: f64,
    /// `log(L)/L * phi * log(R)`; zero at unit rate.
    pub dispersion: f64,
    /// `phi_0 / L`, or `None` when the log argument `2 - e(1 - e^{-2R})` is
    /// not positive and the term has no real value.
    pub correction: Option<f64>,
}

impl PerBreakdown {
    pub fn raw(&self) -> f64 {
        self.outage + self.dispersion + self.correction.unwrap_or(0.0)
    }
}

fn check_per_args(gamma: f64, block_length: u32, code_rate: f64) -> Result<(), InvalidArgument> {
    if !(gamma > 0.0) {
        return Err(InvalidArgument::new("gamma", "SNR must be positive"));
    }
    if block_length < 1 {
        return Err(InvalidArgument::new("block_length", "must be >= 1"));
    }
    if !(code_rate > 0.0) || !code_rate.is_finite() {
        return Err(InvalidArgument::new("code_rate", "must be positive and finite"));
    }
    Ok(())
}

/// Individual terms of the block error expansion at linear SNR `gamma`.
pub fn per_breakdown(gamma: f64, block_length: u32, code_rate: f64) -> Result<PerBreakdown, InvalidArgument> {
    check_per_args(gamma, block_length, code_rate)?;
    Ok(per_breakdown_unchecked(gamma, block_length, code_rate))
}

fn per_breakdown_unchecked(gamma: f64, block_length: u32, code_rate: f64) -> PerBreakdown {
    let l = f64::from(block_length);
    let er = code_rate.exp();
    // Exponent taken literally as (-e^R - 1)/gamma.
    let a = (-er - 1.0) / gamma;
    let decay = a.exp();
    let outage = -a.exp_m1();
    let phi = -er / (2.0 * gamma) * decay;
    let dispersion = l.ln() / l * phi * code_rate.ln();
    let log_arg = 2.0 - E * (1.0 - (-2.0 * code_rate).exp());
    let correction = (log_arg > 0.0).then(|| {
        let phi0 = er / gamma * decay * (2.0 - a + (1.0 / log_arg.sqrt()).ln());
        phi0 / l
    });
    PerBreakdown { outage, dispersion, correction }
}

/// Block error probability at linear SNR `gamma`, clamped to `[0, 1]`.
pub fn packet_error_probability(gamma: f64, block_length: u32, code_rate: f64) -> Result<f64, InvalidArgument> {
    let raw = per_breakdown(gamma, block_length, code_rate)?.raw();
    if !(0.0..=1.0).contains(&raw) {
        log::warn!("error model left [0, 1]: raw={raw} gamma={gamma} L={block_length} R={code_rate}");
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Draws a Rayleigh amplitude with scale `sigma_scale` and a uniform phase.
pub fn sample_fading<R: Rng + ?Sized>(sigma_scale: f64, rng: &mut R) -> FadingSample {
    let u: f64 = rng.random();
    let w: f64 = rng.random();
    // 1 - u lies in (0, 1], so the log is finite.
    let beta = sigma_scale * (-2.0 * (1.0 - u).ln()).sqrt();
    FadingSample { beta, phi: 2.0 * PI * w }
}

/// Uniform delay on `{0, ..., max_delay_slots}`.
pub fn sample_delay<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> u32 {
    rng.random_range(0..=cfg.max_delay_slots)
}

/// A link with its mean error probability precomputed.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: LinkConfig,
    mean_per: f64,
}

impl Channel {
    pub fn new(cfg: LinkConfig) -> Result<Self, InvalidArgument> {
        let mean_per = packet_error_probability(cfg.gamma(), cfg.block_length, cfg.code_rate)?;
        Ok(Self { cfg, mean_per })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    /// Error probability at the mean SNR.
    pub fn mean_per(&self) -> f64 {
        self.mean_per
    }

    pub fn transmit<L: Rng + ?Sized, D: Rng + ?Sized>(&self, loss_rng: &mut L, delay_rng: &mut D) -> ChannelDraw {
        let p = match self.cfg.per_mode {
            PerMode::AnalyticMeanSnr => self.mean_per,
            PerMode::InstantaneousFading => {
                let fade = sample_fading(UNIT_POWER_SCALE, loss_rng);
                // E[beta^2] = 2 sigma^2 = 1.
                let gamma = self.cfg.gamma() * fade.beta * fade.beta;
                if gamma > 0.0 {
                    let raw = per_breakdown_unchecked(gamma, self.cfg.block_length, self.cfg.code_rate).raw();
                    if !(0.0..=1.0).contains(&raw) {
                        log::debug!("error model left [0, 1]: raw={raw} gamma={gamma}");
                    }
                    raw.clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
        };
        let u: f64 = loss_rng.random();
        let delay_slots = sample_delay(&self.cfg, delay_rng);
        ChannelDraw { lost: u < p, delay_slots }
    }
}

/// One transmission over a link described by `cfg`.
pub fn transmit<L: Rng + ?Sized, D: Rng + ?Sized>(
    cfg: &LinkConfig,
    loss_rng: &mut L,
    delay_rng: &mut D,
) -> Result<ChannelDraw, InvalidArgument> {
    Ok(Channel::new(*cfg)?.transmit(loss_rng, delay_rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn db(x: f64) -> f64 {
        10f64.powf(x / 10.0)
    }

    #[test]
    fn per_matches_reported_table() {
        for (snr, expected) in [(5.0, 0.696), (10.0, 0.312), (15.0, 0.112), (20.0, 0.037)] {
            let p = packet_error_probability(db(snr), 100, 1.0).unwrap();
            assert!((p - expected).abs() <= 0.005, "snr {snr}: {p}");
        }
        assert!(packet_error_probability(db(100.0), 100, 1.0).unwrap() < 1e-6);
    }

    #[test]
    fn unit_rate_drops_dispersion_and_correction() {
        // 2 - e(1 - e^-2) < 0 at R = 1.
        let b = per_breakdown(db(15.0), 100, 1.0).unwrap();
        assert_eq!(b.dispersion, 0.0);
        assert!(b.correction.is_none());
        let b = per_breakdown(db(15.0), 100, 0.5).unwrap();
        assert!(b.correction.is_some());
        // log R < 0 and phi < 0.
        assert!(b.dispersion > 0.0);
    }

    #[test]
    fn per_rejects_bad_snr() {
        assert!(packet_error_probability(0.0, 100, 1.0).is_err());
        assert!(packet_error_probability(-1.0, 100, 1.0).is_err());
        assert!(packet_error_probability(1.0, 0, 1.0).is_err());
        assert!(packet_error_probability(1.0, 100, 0.0).is_err());
    }

    #[test]
    fn lossless_link_has_zero_per() {
        assert_eq!(packet_error_probability(f64::INFINITY, 100, 1.0).unwrap(), 0.0);
        assert_eq!(Channel::new(LinkConfig::perfect()).unwrap().mean_per(), 0.0);
    }

    #[test]
    fn per_is_monotone_and_bounded() {
        for rate in [0.25, 0.5, 1.0, 2.0] {
            let mut prev = f64::INFINITY;
            let mut g = 0.1;
            while g <= 1e4 {
                let p = packet_error_probability(g, 100, rate).unwrap();
                assert!((0.0..=1.0).contains(&p));
                assert!(p <= prev + 1e-15, "rate {rate} gamma {g}: {p} > {prev}");
                prev = p;
                g *= 1.05;
            }
        }
    }

    #[test]
    fn rayleigh_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let samples: Vec<FadingSample> = (0..n).map(|_| sample_fading(1.0, &mut rng)).collect();
        let mean = samples.iter().map(|s| s.beta).sum::<f64>() / n as f64;
        let second = samples.iter().map(|s| s.beta * s.beta).sum::<f64>() / n as f64;
        let expected_mean = (PI / 2.0).sqrt();
        assert!((mean - expected_mean).abs() <= 0.01 * expected_mean, "mean {mean}");
        assert!((second - 2.0).abs() <= 0.02 * 2.0, "second moment {second}");
        assert!(samples.iter().all(|s| s.beta >= 0.0 && (0.0..2.0 * PI).contains(&s.phi)));
    }

    #[test]
    fn phase_is_uniform_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 100_000;
        let mut phis: Vec<f64> = (0..n).map(|_| sample_fading(1.0, &mut rng).phi / (2.0 * PI)).collect();
        phis.sort_by(f64::total_cmp);
        let d = phis
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let lo = i as f64 / n as f64;
                let hi = (i + 1) as f64 / n as f64;
                (p - lo).abs().max((hi - p).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic 1% critical value.
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn delay_support_and_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zero = LinkConfig::new(15.0, 0);
        assert!((0..1000).all(|_| sample_delay(&zero, &mut rng) == 0));
        let one = LinkConfig::new(15.0, 1);
        assert!((0..1000).all(|_| sample_delay(&one, &mut rng) <= 1));

        let five = LinkConfig::new(15.0, 5);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_delay(&five, &mut rng) as usize] += 1;
        }
        let expected = n as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 5 degrees of freedom, 1% critical value.
        assert!(chi2 < 15.086, "chi2 {chi2}");
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn analytic_loss_rate_matches_model() {
        let cfg = LinkConfig::new(15.0, 5);
        let ch = Channel::new(cfg).unwrap();
        let mut loss = ChaCha8Rng::seed_from_u64(7);
        let mut delay = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let lost = (0..n).filter(|_| ch.transmit(&mut loss, &mut delay).lost).count();
        let rate = lost as f64 / n as f64;
        assert!((rate - 0.112).abs() <= 0.01, "rate {rate}");
        let se = (ch.mean_per() * (1.0 - ch.mean_per()) / n as f64).sqrt();
        assert!((rate - ch.mean_per()).abs() <= 3.0 * se);
    }

    #[test]
    fn high_snr_never_loses() {
        let ch = Channel::new(LinkConfig::new(100.0, 0)).unwrap();
        let mut loss = ChaCha8Rng::seed_from_u64(1);
        let mut delay = ChaCha8Rng::seed_from_u64(2);
        let lost = (0..100_000).filter(|_| ch.transmit(&mut loss, &mut delay).lost).count();
        assert!((lost as f64) / 1e5 < 1e-4);
    }

    #[test]
    fn delay_stream_is_unaffected_by_loss_setting() {
        let delays = |snr: f64| {
            let ch = Channel::new(LinkConfig::new(snr, 5)).unwrap();
            let mut loss = ChaCha8Rng::seed_from_u64(1);
            let mut delay = ChaCha8Rng::seed_from_u64(2);
            (0..500).map(|_| ch.transmit(&mut loss, &mut delay).delay_slots).collect::<Vec<_>>()
        };
        assert_eq!(delays(5.0), delays(f64::INFINITY));
    }

    #[test]
    fn fading_mode_loses_more_than_mean_snr() {
        let mut cfg = LinkConfig::new(15.0, 0);
        cfg.per_mode = PerMode::InstantaneousFading;
        let ch = Channel::new(cfg).unwrap();
        let mut loss = ChaCha8Rng::seed_from_u64(3);
        let mut delay = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let rate = (0..n).filter(|_| ch.transmit(&mut loss, &mut delay).lost).count() as f64 / n as f64;
        // E[1 - exp(-c / X)] with X ~ Exp(1), by midpoint quadrature.
        let c = (E + 1.0) / db(15.0);
        let steps = 200_000;
        let h = 40.0 / steps as f64;
        let expected: f64 = (0..steps)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                (1.0 - (-c / x).exp()) * (-x).exp() * h
            })
            .sum();
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((rate - expected).abs() <= 4.0 * se, "rate {rate} expected {expected}");
        assert!(rate > ch.mean_per());
    }
}
