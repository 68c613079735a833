//! Clipping, Gaussian noise and wavelet-domain noise injection.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::haar::{self, HaarError, WaveletDecomposition};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("policy has {policy} clipping bounds but vector has {vector} layers")]
    LayerCountMismatch { policy: usize, vector: usize },
    #[error("clipping bound must be positive, got {0}")]
    NonPositiveClip(f64),
    #[error("noise standard deviation must be non-negative and finite, got {0}")]
    NegativeSigma(f64),
    #[error("duplicate layer name {0:?}")]
    DuplicateLayer(String),
    #[error("flat vector has {actual} values, layout expects {expected}")]
    FlatLengthMismatch { expected: usize, actual: usize },
    #[error("layer layouts differ")]
    ShapeMismatch,
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Haar(#[from] HaarError),
}

pub type Result<T> = std::result::Result<T, MechanismError>;

/// Named flat segments, e.g. the weight and bias blocks of a model.
///
/// Flattening concatenates layers in declaration order; layer values are
/// already row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredVector {
    layers: Vec<(String, Vec<f64>)>,
}

impl LayeredVector {
    pub fn new(layers: Vec<(String, Vec<f64>)>) -> Result<Self> {
        for (i, (name, _)) in layers.iter().enumerate() {
            if layers[..i].iter().any(|(n, _)| n == name) {
                return Err(MechanismError::DuplicateLayer(name.clone()));
            }
        }
        Ok(Self { layers })
    }

    /// A zero vector with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|(n, v)| (n.clone(), vec![0.0; v.len()]))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[(String, Vec<f64>)] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i].1
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.layers[i].1
    }

    /// `(name, length)` per layer, in flattening order.
    pub fn layout(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .map(|(n, v)| (n.clone(), v.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, v) in &self.layers {
            out.extend_from_slice(v);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(MechanismError::FlatLengthMismatch {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let mut rest = flat;
        let layers = self
            .layers
            .iter()
            .map(|(n, v)| {
                let (head, tail) = rest.split_at(v.len());
                rest = tail;
                (n.clone(), head.to_vec())
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|((a, x), (b, y))| a == b && x.len() == y.len())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(self.layers.iter().flat_map(|(_, v)| v.iter()))
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|(_, v)| v.iter())
    }

    pub fn iter_values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|(_, v)| v.iter_mut())
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            return Err(MechanismError::ShapeMismatch);
        }
        for (a, b) in self.iter_values_mut().zip(other.iter_values()) {
            *a += b;
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            return Err(MechanismError::ShapeMismatch);
        }
        for (a, b) in self.iter_values_mut().zip(other.iter_values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.iter_values_mut() {
            *a *= factor;
        }
    }
}

pub(crate) fn l2_norm<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-example L2 clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClippingPolicy {
    /// One bound on the concatenation of all layers.
    Flat(f64),
    /// One bound per layer.
    PerLayer(Vec<f64>),
}

impl ClippingPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = match self {
            ClippingPolicy::Flat(c) => (c.is_nan() || *c <= 0.0).then_some(*c),
            ClippingPolicy::PerLayer(cs) => cs.iter().copied().find(|c| c.is_nan() || *c <= 0.0),
        };
        match bad {
            Some(c) => Err(MechanismError::NonPositiveClip(c)),
            None => Ok(()),
        }
    }
}

fn clip_factor(norm: f64, bound: f64) -> Option<f64> {
    (norm > bound).then(|| bound / norm)
}

fn clip_slice(v: &mut [f64], bound: f64) {
    if let Some(f) = clip_factor(l2_norm(v.iter()), bound) {
        v.iter_mut().for_each(|x| *x *= f);
    }
}

/// Scales `v` by `1 / max(1, ||v|| / C)`, flat or per layer. Vectors that
/// are already within the bound come back unchanged.
pub fn clip(v: &LayeredVector, policy: &ClippingPolicy) -> Result<LayeredVector> {
    policy.validate()?;
    let mut out = v.clone();
    match policy {
        ClippingPolicy::Flat(c) => {
            if let Some(f) = clip_factor(v.norm(), *c) {
                out.scale(f);
            }
        }
        ClippingPolicy::PerLayer(cs) => {
            if cs.len() != v.layer_count() {
                return Err(MechanismError::LayerCountMismatch {
                    policy: cs.len(),
                    vector: v.layer_count(),
                });
            }
            for (i, c) in cs.iter().enumerate() {
                clip_slice(out.layer_mut(i), *c);
            }
        }
    }
    Ok(out)
}

/// Flat clipping of a plain vector to L2 norm `bound`.
pub fn clip_flat(v: &mut [f64], bound: f64) -> Result<()> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(MechanismError::NonPositiveClip(bound));
    }
    clip_slice(v, bound);
    Ok(())
}

/// L2 sensitivity of the clipped (concatenated) gradient.
pub fn sensitivity(policy: &ClippingPolicy) -> f64 {
    match policy {
        ClippingPolicy::Flat(c) => *c,
        ClippingPolicy::PerLayer(cs) => cs.iter().map(|c| c * c).sum::<f64>().sqrt(),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(MechanismError::NegativeSigma(sigma))
    }
}

/// `len` i.i.d. draws from `N(0, sigma^2)`.
pub fn gaussian_noise(len: usize, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    Ok((0..len)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Adds `N(0, (sigma / W)^2)` to every coefficient, in canonical order.
pub fn perturb_coefficients(d: &mut WaveletDecomposition, sigma: f64, rng: &mut Rng) -> Result<()> {
    check_sigma(sigma)?;
    let weights = haar::haar_weights(d.padded_len())?;
    for (c, w) in d.coeffs_mut().iter_mut().zip(weights) {
        let z: f64 = rng.sample(StandardNormal);
        *c += (sigma / w) * z;
    }
    Ok(())
}

/// Transform, add `N(0, (sigma / W)^2)` per coefficient, invert.
pub fn wavelet_noise(v: &[f64], sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let mut d = haar::haar_forward(v)?;
    perturb_coefficients(&mut d, sigma, rng)?;
    Ok(haar::haar_inverse(&d))
}

/// Transform, clip the coefficient vector to norm `clip`, add
/// `N(0, (sigma * clip / W)^2)` per coefficient, invert.
pub fn wavelet_noise_clipped(v: &[f64], clip: f64, sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let mut d = haar::haar_forward(v)?;
    clip_flat(d.coeffs_mut(), clip)?;
    perturb_coefficients(&mut d, noise_std(sigma, clip), rng)?;
    Ok(haar::haar_inverse(&d))
}

/// Absolute noise scale `multiplier * sensitivity`, with a zero multiplier
/// meaning no noise even for an unbounded sensitivity.
pub fn noise_std(multiplier: f64, sensitivity: f64) -> f64 {
    if multiplier == 0.0 {
        0.0
    } else {
        multiplier * sensitivity
    }
}

/// Median of gradient norms; lower middle value for even counts.
pub fn median_clip_estimate(norms: &[f64]) -> Result<f64> {
    if norms.is_empty() {
        return Err(MechanismError::Empty);
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Where noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheme {
    /// `N(0, sigma^2)` on every element.
    Standard,
    /// `N(0, (sigma / W)^2)` on every Haar coefficient.
    Wavelet,
}

/// Absolute noise scale plus where it is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub scheme: NoiseScheme,
}

impl NoiseSpec {
    pub fn new(sigma: f64, scheme: NoiseScheme) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, scheme })
    }

    /// Returns `v` plus noise under this spec.
    pub fn apply(&self, v: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        match self.scheme {
            NoiseScheme::Standard => {
                let noise = gaussian_noise(v.len(), self.sigma, rng)?;
                Ok(v.iter().zip(noise).map(|(x, n)| x + n).collect())
            }
            NoiseScheme::Wavelet => wavelet_noise(v, self.sigma, rng),
        }
    }

    /// Exact per-element variance of the injected noise for a vector of
    /// length `len`.
    pub fn element_variance(&self, len: usize) -> Result<Vec<f64>> {
        match self.scheme {
            NoiseScheme::Standard => Ok(vec![self.sigma * self.sigma; len]),
            NoiseScheme::Wavelet => {
                let m = haar::padded_len(len);
                let std = haar::weighted_std(m, self.sigma)?;
                let mut v = haar::variance_propagation(m, &std)?;
                v.truncate(len);
                Ok(v)
            }
        }
    }
}
