//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! For integer order `α` the RDP is bounded by
//!
//! ```text
//! 1/(α-1) · ln Σ_{k=0..α} C(α,k) (1-q)^(α-k) q^k exp(k(k-1) / (2σ²))
//! ```
//!
//! The binomial weights sum to one, so the series is `1 + S` with
//! `S = Σ_{k≥2} C(α,k) (1-q)^(α-k) q^k expm1(k(k-1)/(2σ²))`, a sum of
//! non-negative terms. `S` is accumulated with log-sum-exp and the result is
//! `ln1p(S)`, which keeps full relative precision for tiny `q` and avoids
//! overflow for large `α`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountantError {
    #[error("noise multiplier must be positive and finite, got {0}")]
    BadNoiseMultiplier(f64),
    #[error("sampling probability must lie in [0, 1], got {0}")]
    BadSamplingRate(f64),
    #[error("RDP order must be > 1, got {0}")]
    BadOrder(f64),
    #[error("subsampled RDP needs an integer order >= 2, got {0}")]
    NonIntegerOrder(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("ledger has no orders")]
    EmptyLedger,
    #[error("padded length {0} is not a power of two")]
    NotPowerOfTwo(usize),
}

pub type Result<T> = std::result::Result<T, AccountantError>;

/// Integer orders 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<f64> {
    (2..=64u32).map(f64::from).chain([128.0, 256.0]).collect()
}

/// Sampling rate and noise multiplier of one mechanism invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    q: f64,
    noise_multiplier: f64,
}

impl MechanismParams {
    pub fn new(q: f64, noise_multiplier: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(AccountantError::BadSamplingRate(q));
        }
        check_sigma(noise_multiplier)?;
        Ok(Self {
            q,
            noise_multiplier,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(AccountantError::BadNoiseMultiplier(sigma))
    }
}

/// RDP of the plain Gaussian mechanism, `α / (2σ²)`.
pub fn rdp_gaussian(noise_multiplier: f64, alpha: f64) -> Result<f64> {
    check_sigma(noise_multiplier)?;
    if alpha.is_nan() || alpha <= 1.0 || alpha.is_infinite() {
        return Err(AccountantError::BadOrder(alpha));
    }
    Ok(alpha / (2.0 * noise_multiplier * noise_multiplier))
}

/// `ln(e^a + e^b)`.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `ln(e^x - 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 1.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `ln(1 + e^s)`.
fn log1p_exp(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// RDP of the Poisson-subsampled Gaussian at integer order `alpha`.
pub fn rdp_subsampled_gaussian(p: &MechanismParams, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(AccountantError::NonIntegerOrder(alpha as f64));
    }
    let q = p.q;
    if q == 0.0 {
        return Ok(0.0);
    }
    let sigma2 = p.noise_multiplier * p.noise_multiplier;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();

    let mut log_s = f64::NEG_INFINITY;
    let mut ln_binom = 0.0; // ln C(alpha, k), built incrementally
    for k in 1..=alpha {
        ln_binom += ((alpha - k + 1) as f64 / k as f64).ln();
        if k < 2 {
            continue;
        }
        let rest = alpha - k;
        if rest > 0 && q == 1.0 {
            continue;
        }
        let ln_weight = if rest == 0 {
            k as f64 * ln_q
        } else {
            ln_binom + rest as f64 * ln_1mq + k as f64 * ln_q
        };
        let exponent = (k as f64) * (k as f64 - 1.0) / (2.0 * sigma2);
        log_s = log_add(log_s, ln_weight + log_expm1(exponent));
    }
    Ok(log1p_exp(log_s) / (alpha - 1) as f64)
}

/// Converts an order stored as `f64` to the integer the series needs.
fn integer_order(alpha: f64) -> Result<u32> {
    if alpha >= 2.0 && alpha.fract() == 0.0 && alpha <= u32::MAX as f64 {
        Ok(alpha as u32)
    } else {
        Err(AccountantError::NonIntegerOrder(alpha))
    }
}

/// Accumulated RDP over a fixed grid of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpLedger {
    orders: Vec<f64>,
    eps_rdp: Vec<f64>,
    steps: u64,
}

impl Default for RdpLedger {
    fn default() -> Self {
        Self::new(default_orders()).expect("default orders are valid")
    }
}

impl RdpLedger {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(AccountantError::EmptyLedger);
        }
        for &a in &orders {
            integer_order(a)?;
        }
        let eps_rdp = vec![0.0; orders.len()];
        Ok(Self {
            orders,
            eps_rdp,
            steps: 0,
        })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn eps_rdp(&self) -> &[f64] {
        &self.eps_rdp
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// A new ledger with `steps` more invocations of `p` composed in.
    pub fn compose(&self, p: &MechanismParams, steps: u64) -> Result<Self> {
        let mut out = self.clone();
        if steps == 0 {
            return Ok(out);
        }
        for (eps, &a) in out.eps_rdp.iter_mut().zip(&self.orders) {
            *eps += steps as f64 * rdp_subsampled_gaussian(p, integer_order(a)?)?;
        }
        out.steps += steps;
        Ok(out)
    }

    /// `(ε, best order)` minimising `eps_rdp(α) + ln(1/δ)/(α-1)` over the grid.
    pub fn to_epsilon(&self, delta: f64) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountantError::BadDelta(delta));
        }
        let log_inv_delta = -delta.ln();
        self.orders
            .iter()
            .zip(&self.eps_rdp)
            .map(|(&a, &e)| (e + log_inv_delta / (a - 1.0), a))
            .fold(None, |best: Option<(f64, f64)>, cur| match best {
                Some(b) if b.0 <= cur.0 => Some(b),
                _ => Some(cur),
            })
            .ok_or(AccountantError::EmptyLedger)
    }
}

/// Vanilla-equivalent multiplier of a wavelet-scheme step:
/// `σ_haar · sqrt((2 + log2 m) / 2)`.
pub fn effective_noise_multiplier(sigma_haar: f64, m: usize) -> Result<f64> {
    check_sigma(sigma_haar)?;
    Ok(sigma_haar * wavelet_saving_factor(m)?)
}

/// The wavelet-scheme multiplier that accounts like vanilla multiplier
/// `sigma`.
pub fn haar_noise_multiplier_for(sigma: f64, m: usize) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(sigma / wavelet_saving_factor(m)?)
}

/// `sqrt((2 + log2 m) / 2)`.
pub fn wavelet_saving_factor(m: usize) -> Result<f64> {
    if !m.is_power_of_two() {
        return Err(AccountantError::NotPowerOfTwo(m));
    }
    Ok(((2.0 + m.trailing_zeros() as f64) / 2.0).sqrt())
}

/// ε after `steps` invocations of `p` on the default order grid.
pub fn epsilon_for(p: &MechanismParams, steps: u64, delta: f64) -> Result<f64> {
    Ok(RdpLedger::default().compose(p, steps)?.to_epsilon(delta)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(q: f64, s: f64) -> MechanismParams {
        MechanismParams::new(q, s).unwrap()
    }

    #[test]
    fn gaussian_closed_form() {
        assert_eq!(rdp_gaussian(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(rdp_gaussian(2.0, 8.0).unwrap(), 1.0);
        assert!(rdp_gaussian(0.0, 2.0).is_err());
        assert!(rdp_gaussian(1.0, 1.0).is_err());
    }

    #[test]
    fn full_sampling_is_plain_gaussian() {
        for s in [0.5, 1.0, 2.0, 4.0] {
            for a in 2..=64u32 {
                let sub = rdp_subsampled_gaussian(&params(1.0, s), a).unwrap();
                let plain = rdp_gaussian(s, a as f64).unwrap();
                assert!((sub - plain).abs() <= 1e-9 * plain.max(1.0), "{s} {a}");
            }
        }
    }

    #[test]
    fn zero_sampling_is_free() {
        for a in 2..=64u32 {
            assert_eq!(rdp_subsampled_gaussian(&params(0.0, 1.0), a).unwrap(), 0.0);
        }
    }

    #[test]
    fn order_two_closed_form() {
        // at α = 2 the series is 1 + q²(e^{1/σ²} - 1)
        let (q, s) = (0.01f64, 1.0f64);
        let expected = (q * q * (1.0f64 / (s * s)).exp_m1()).ln_1p();
        let got = rdp_subsampled_gaussian(&params(q, s), 2).unwrap();
        assert!(
            (got - expected).abs() <= 1e-13 * expected,
            "{got} {expected}"
        );
    }

    #[test]
    fn large_orders_stay_finite() {
        let v = rdp_subsampled_gaussian(&params(0.1, 0.5), 256).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn param_validation() {
        assert!(MechanismParams::new(1.5, 1.0).is_err());
        assert!(MechanismParams::new(-0.1, 1.0).is_err());
        assert!(MechanismParams::new(0.5, 0.0).is_err());
        assert!(rdp_subsampled_gaussian(&params(0.5, 1.0), 1).is_err());
        assert!(RdpLedger::new(vec![2.5]).is_err());
        assert!(RdpLedger::new(vec![]).is_err());
    }

    #[test]
    fn composition_is_additive() {
        let p = params(0.01, 1.0);
        let l = RdpLedger::default();
        assert_eq!(l.compose(&p, 0).unwrap(), l);
        let a = l.compose(&p, 30).unwrap().compose(&p, 70).unwrap();
        let b = l.compose(&p, 100).unwrap();
        for (x, y) in a.eps_rdp().iter().zip(b.eps_rdp()) {
            assert!((x - y).abs() <= 1e-12 * y.max(1e-300));
        }
        assert_eq!(a.steps(), 100);
        for (i, &o) in l.orders().iter().enumerate() {
            let one = rdp_subsampled_gaussian(&p, o as u32).unwrap();
            assert_eq!(b.eps_rdp()[i], 100.0 * one);
        }
    }

    #[test]
    fn epsilon_conversion() {
        let l = RdpLedger {
            orders: vec![2.0],
            eps_rdp: vec![1.0],
            steps: 1,
        };
        let (eps, a) = l.to_epsilon(1e-5).unwrap();
        assert!((eps - (1.0 + 1e5f64.ln())).abs() < 1e-12);
        assert!((eps - 12.5129).abs() < 1e-4);
        assert_eq!(a, 2.0);

        let (eps, a) = RdpLedger::default().to_epsilon(1e-5).unwrap();
        assert_eq!(a, 256.0);
        assert_eq!(eps, 1e5f64.ln() / 255.0);

        assert!(l.to_epsilon(0.0).is_err());
        assert!(l.to_epsilon(1.0).is_err());
    }

    #[test]
    fn noise_multiplier_mapping() {
        let e = effective_noise_multiplier(1.0, 8).unwrap();
        assert!((e - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((e - 1.5811).abs() < 1e-4);
        assert_eq!(effective_noise_multiplier(1.0, 1).unwrap(), 1.0);
        assert!((haar_noise_multiplier_for(e, 8).unwrap() - 1.0).abs() < 1e-15);
        assert!(effective_noise_multiplier(1.0, 6).is_err());
        assert!(effective_noise_multiplier(0.0, 8).is_err());
    }
}
