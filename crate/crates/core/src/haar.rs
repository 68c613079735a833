//! One-dimensional Haar wavelet transform.
//!
//! Coefficients use a flat canonical layout:
//!
//! ```text
//! [ base | level 1 (m/2, finest) | level 2 (m/4) | ... | level log2(m) (1) ]
//! ```
//!
//! Each detail is `(L - R) / 2` of a pair of means from the level below, and
//! the base is the overall mean. Element `i` is rebuilt as the base plus the
//! signed sum of the details on its ancestor chain, `+` when `i` sits in the
//! left subtree of that detail and `-` when it sits in the right one.
//!
//! Noise weights are `m` for the base and `2^l` for a level-`l` detail.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HaarError {
    #[error("empty vector")]
    Empty,
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("original length {original_len} exceeds padded length {padded_len}")]
    BadOriginalLen {
        original_len: usize,
        padded_len: usize,
    },
    #[error("element index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("standard deviations must be finite and non-negative")]
    NegativeStd,
}

pub type Result<T> = std::result::Result<T, HaarError>;

/// Haar coefficients of a zero-padded vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    coeffs: Vec<f64>,
    original_len: usize,
}

impl WaveletDecomposition {
    /// Builds a decomposition from raw coefficients in canonical order.
    pub fn from_parts(coeffs: Vec<f64>, original_len: usize) -> Result<Self> {
        let m = coeffs.len();
        check_pow2(m)?;
        if original_len == 0 || original_len > m || padded_len(original_len) != m {
            return Err(HaarError::BadOriginalLen {
                original_len,
                padded_len: m,
            });
        }
        Ok(Self {
            coeffs,
            original_len,
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Padded length `m`.
    pub fn padded_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn original_len(&self) -> usize {
        self.original_len
    }

    /// Number of detail levels, `log2(m)`.
    pub fn levels(&self) -> u32 {
        self.coeffs.len().trailing_zeros()
    }

    pub fn base(&self) -> f64 {
        self.coeffs[0]
    }

    /// Detail coefficients of `level` (1 = finest), left to right.
    pub fn level(&self, level: u32) -> &[f64] {
        let m = self.coeffs.len();
        assert!(level >= 1 && level <= self.levels(), "level out of range");
        let start = level_offset(m, level);
        &self.coeffs[start..start + (m >> level)]
    }
}

/// One step of an element's reconstruction: `sign * coeffs[coeff_index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainEntry {
    pub coeff_index: usize,
    pub sign: i8,
}

/// Coefficients that contribute to one element, base first and then from
/// the coarsest detail down to the finest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AncestorChain {
    pub entries: Vec<ChainEntry>,
}

fn check_pow2(m: usize) -> Result<()> {
    if m.is_power_of_two() {
        Ok(())
    } else {
        Err(HaarError::NotPowerOfTwo(m))
    }
}

/// Smallest power of two `>= len` (1 for `len <= 1`).
pub fn padded_len(len: usize) -> usize {
    len.max(1).next_power_of_two()
}

/// Index of the first level-`level` detail in the canonical layout.
fn level_offset(m: usize, level: u32) -> usize {
    // 1 + m/2 + m/4 + ... + m/2^(level-1) = 1 + m - m/2^(level-1)
    1 + m - (m >> (level - 1))
}

/// Appends zeros up to the next power of two.
pub fn pad_to_pow2(v: &[f64]) -> Result<(Vec<f64>, usize)> {
    if v.is_empty() {
        return Err(HaarError::Empty);
    }
    let mut out = Vec::with_capacity(padded_len(v.len()));
    out.extend_from_slice(v);
    out.resize(padded_len(v.len()), 0.0);
    Ok((out, v.len()))
}

/// Forward transform; pads with zeros to a power of two first.
pub fn haar_forward(v: &[f64]) -> Result<WaveletDecomposition> {
    let (mut means, original_len) = pad_to_pow2(v)?;
    let m = means.len();
    let mut coeffs = vec![0.0; m];
    let mut offset = 1;
    let mut len = m;
    while len > 1 {
        let half = len / 2;
        for j in 0..half {
            let (l, r) = (means[2 * j], means[2 * j + 1]);
            coeffs[offset + j] = (l - r) / 2.0;
            means[j] = (l + r) / 2.0;
        }
        offset += half;
        len = half;
    }
    coeffs[0] = means[0];
    Ok(WaveletDecomposition {
        coeffs,
        original_len,
    })
}

/// Inverse transform, truncated to the original (unpadded) length.
pub fn haar_inverse(d: &WaveletDecomposition) -> Vec<f64> {
    let mut out = haar_inverse_padded(d);
    out.truncate(d.original_len);
    out
}

/// Inverse transform over the full padded length.
pub fn haar_inverse_padded(d: &WaveletDecomposition) -> Vec<f64> {
    let m = d.coeffs.len();
    let mut cur = vec![0.0; m];
    let mut next = vec![0.0; m];
    cur[0] = d.coeffs[0];
    let mut len = 1;
    for level in (1..=d.levels()).rev() {
        let details = &d.coeffs[level_offset(m, level)..];
        for j in 0..len {
            next[2 * j] = cur[j] + details[j];
            next[2 * j + 1] = cur[j] - details[j];
        }
        std::mem::swap(&mut cur, &mut next);
        len *= 2;
    }
    cur
}

/// Noise weights aligned with the canonical coefficient layout.
pub fn haar_weights(m: usize) -> Result<Vec<f64>> {
    check_pow2(m)?;
    let mut w = Vec::with_capacity(m);
    w.push(m as f64);
    let mut count = m / 2;
    let mut weight = 2.0;
    while count >= 1 {
        w.extend(std::iter::repeat_n(weight, count));
        count /= 2;
        weight *= 2.0;
    }
    Ok(w)
}

/// Coefficients contributing to element `index` of a length-`m` signal.
pub fn ancestor_chain(m: usize, index: usize) -> Result<AncestorChain> {
    check_pow2(m)?;
    if index >= m {
        return Err(HaarError::IndexOutOfRange { index, len: m });
    }
    let levels = m.trailing_zeros();
    let mut entries = Vec::with_capacity(levels as usize + 1);
    entries.push(ChainEntry {
        coeff_index: 0,
        sign: 1,
    });
    for level in (1..=levels).rev() {
        let right = (index >> (level - 1)) & 1 == 1;
        entries.push(ChainEntry {
            coeff_index: level_offset(m, level) + (index >> level),
            sign: if right { -1 } else { 1 },
        });
    }
    Ok(AncestorChain { entries })
}

/// Exact per-element variance after inverting independent zero-mean noise
/// with the given per-coefficient standard deviations.
pub fn variance_propagation(m: usize, per_coeff_std: &[f64]) -> Result<Vec<f64>> {
    check_pow2(m)?;
    if per_coeff_std.len() != m {
        return Err(HaarError::LengthMismatch {
            expected: m,
            actual: per_coeff_std.len(),
        });
    }
    if per_coeff_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(HaarError::NegativeStd);
    }
    (0..m)
        .map(|i| {
            let chain = ancestor_chain(m, i)?;
            Ok(chain
                .entries
                .iter()
                .map(|e| per_coeff_std[e.coeff_index].powi(2))
                .sum())
        })
        .collect()
}

/// Per-coefficient standard deviations `sigma / W` for the weight function.
pub fn weighted_std(m: usize, sigma: f64) -> Result<Vec<f64>> {
    Ok(haar_weights(m)?.into_iter().map(|w| sigma / w).collect())
}

/// Upper bound on the reconstructed per-element variance factor when noise
/// with std `sigma / W` is injected: `(2 + log2 m) / 2`.
pub fn variance_bound_factor(m: usize) -> Result<f64> {
    check_pow2(m)?;
    Ok((2.0 + m.trailing_zeros() as f64) / 2.0)
}
