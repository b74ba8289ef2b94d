//! Reference single-precision tensor math.
//!
//! Everything here operates on [`TokenMatrix`], a dense row-major
//! `tokens x hidden` activation buffer. The fused residual-add + RMSNorm in
//! [`rmsnorm_residual`] is the oracle every collective in
//! [`crate::collectives`] is checked against.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epsilon used when a model configuration does not specify one.
pub const DEFAULT_EPSILON: f32 = 1e-5;

/// Dense per-token activation matrix, `num_tokens` rows of `hidden` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    num_tokens: usize,
    hidden: usize,
    values: Vec<f32>,
}

impl TokenMatrix {
    /// Wraps `values` (row-major) as a `num_tokens x hidden` matrix.
    pub fn new(num_tokens: usize, hidden: usize, values: Vec<f32>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Dimension("hidden size must be at least 1".into()));
        }
        let expected = num_tokens
            .checked_mul(hidden)
            .ok_or_else(|| Error::Dimension("tokens x hidden overflows".into()))?;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "{} values for a {num_tokens}x{hidden} matrix",
                values.len()
            )));
        }
        Ok(Self {
            num_tokens,
            hidden,
            values,
        })
    }

    /// All-zero matrix.
    pub fn zeros(num_tokens: usize, hidden: usize) -> Result<Self> {
        Self::filled(num_tokens, hidden, 0.0)
    }

    /// Matrix with every element equal to `value`.
    pub fn filled(num_tokens: usize, hidden: usize, value: f32) -> Result<Self> {
        Self::new(num_tokens, hidden, vec![value; num_tokens * hidden])
    }

    /// Builds a matrix element by element from `f(token, index)`.
    pub fn from_fn(
        num_tokens: usize,
        hidden: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(num_tokens * hidden);
        for t in 0..num_tokens {
            for j in 0..hidden {
                values.push(f(t, j));
            }
        }
        Self::new(num_tokens, hidden, values)
    }

    /// Number of token rows.
    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    /// Hidden size (row length).
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `(num_tokens, hidden)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.num_tokens, self.hidden)
    }

    /// Row-major backing storage.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable row-major backing storage.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Consumes the matrix, returning its storage.
    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Hidden vector of token `t`.
    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.hidden..(t + 1) * self.hidden]
    }

    /// Mutable hidden vector of token `t`.
    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        let h = self.hidden;
        &mut self.values[t * h..(t + 1) * h]
    }

    /// Copies the token rows in `rows` into a new matrix.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start > rows.end || rows.end > self.num_tokens {
            return Err(Error::Dimension(format!(
                "row range {}..{} outside 0..{}",
                rows.start, rows.end, self.num_tokens
            )));
        }
        let values = self.values[rows.start * self.hidden..rows.end * self.hidden].to_vec();
        Self::new(rows.end - rows.start, self.hidden, values)
    }

    /// Index of the first NaN or infinite element, as `(token, index)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.hidden, p % self.hidden))
    }

    fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some((token, index)) => Err(Error::NonFinite { what, token, index }),
            None => Ok(()),
        }
    }
}

/// RMSNorm weight vector and epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    weight: Vec<f32>,
    epsilon: f32,
}

impl NormParams {
    /// Weight of length `hidden` and a finite, non-negative `epsilon`.
    ///
    /// `epsilon = 0` is accepted so scale-invariance can be exercised exactly;
    /// an all-zero row then normalizes to NaN.
    pub fn new(weight: Vec<f32>, epsilon: f32) -> Result<Self> {
        if weight.is_empty() {
            return Err(Error::Dimension("norm weight must be non-empty".into()));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        if let Some(index) = weight.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                what: "norm weight",
                token: 0,
                index,
            });
        }
        Ok(Self { weight, epsilon })
    }

    /// Unit weight of length `hidden` with [`DEFAULT_EPSILON`].
    pub fn ones(hidden: usize) -> Result<Self> {
        Self::new(vec![1.0; hidden], DEFAULT_EPSILON)
    }

    /// Per-channel scale.
    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    /// Variance epsilon.
    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    /// Hidden size the weight applies to.
    pub fn hidden(&self) -> usize {
        self.weight.len()
    }
}

/// Normalizes one token.
///
/// `summed` is the pre-residual activation row, `residual` the running
/// residual. On return `residual_out = summed + residual` and
/// `out = residual_out * rsqrt(mean(residual_out^2) + eps) * weight`.
/// Squares are accumulated in `f64` in ascending hidden index order.
pub(crate) fn normalize_token(
    summed: &[f32],
    residual: &[f32],
    params: &NormParams,
    out: &mut [f32],
    residual_out: &mut [f32],
) {
    let hidden = summed.len();
    let mut sum_sq = 0.0f64;
    for j in 0..hidden {
        let r = summed[j] + residual[j];
        residual_out[j] = r;
        sum_sq += f64::from(r) * f64::from(r);
    }
    let variance = sum_sq / hidden as f64;
    let scale = (1.0 / libm::sqrt(variance + f64::from(params.epsilon))) as f32;
    for j in 0..hidden {
        out[j] = residual_out[j] * scale * params.weight[j];
    }
}

/// Fused residual addition and RMSNorm over every token.
///
/// Returns `(output, residual_out)` where `residual_out = input + residual`
/// and each output row is that sum scaled by its reciprocal RMS and `weight`.
pub fn rmsnorm_residual(
    input: &TokenMatrix,
    residual: &TokenMatrix,
    params: &NormParams,
) -> Result<(TokenMatrix, TokenMatrix)> {
    if input.shape() != residual.shape() {
        return Err(Error::Dimension(format!(
            "input {:?} vs residual {:?}",
            input.shape(),
            residual.shape()
        )));
    }
    if params.hidden() != input.hidden() {
        return Err(Error::Dimension(format!(
            "norm weight of length {} for hidden size {}",
            params.hidden(),
            input.hidden()
        )));
    }
    input.check_finite("input")?;
    residual.check_finite("residual")?;

    let (tokens, hidden) = input.shape();
    let mut output = TokenMatrix::zeros(tokens, hidden)?;
    let mut residual_out = TokenMatrix::zeros(tokens, hidden)?;
    for t in 0..tokens {
        normalize_token(
            input.row(t),
            residual.row(t),
            params,
            output.row_mut(t),
            residual_out.row_mut(t),
        );
    }
    Ok((output, residual_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, t: usize, h: usize) -> TokenMatrix {
        TokenMatrix::from_fn(t, h, |_, _| rng.random_range(-2.0f32..2.0)).unwrap()
    }

    /// Independent scalar oracle: plain double loop, one token at a time.
    fn scalar_oracle(
        input: &TokenMatrix,
        residual: &TokenMatrix,
        weight: &[f32],
        eps: f32,
    ) -> Vec<f32> {
        let (t, h) = input.shape();
        let mut out = vec![0.0f32; t * h];
        for tok in 0..t {
            let mut acc = 0.0f64;
            for j in 0..h {
                let v = (input.values()[tok * h + j] + residual.values()[tok * h + j]) as f64;
                acc += v * v;
            }
            let inv = 1.0 / (acc / h as f64 + eps as f64).sqrt();
            for j in 0..h {
                let v = input.values()[tok * h + j] + residual.values()[tok * h + j];
                out[tok * h + j] = (v as f64 * inv * weight[j] as f64) as f32;
            }
        }
        out
    }

    #[test]
    fn zero_inputs_give_zero_outputs() {
        let z = TokenMatrix::zeros(3, 4).unwrap();
        let params = NormParams::new(vec![0.5, 1.0, 2.0, 3.0], DEFAULT_EPSILON).unwrap();
        let (out, res) = rmsnorm_residual(&z, &z, &params).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert!(res.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_hand_computation() {
        let input = TokenMatrix::new(1, 1, vec![3.0]).unwrap();
        let residual = TokenMatrix::new(1, 1, vec![1.0]).unwrap();
        let params = NormParams::new(vec![2.0], 0.0).unwrap();
        let (out, res) = rmsnorm_residual(&input, &residual, &params).unwrap();
        assert_eq!(out.values(), &[2.0]);
        assert_eq!(res.values(), &[4.0]);
    }

    #[test]
    fn matches_scalar_oracle_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_matrix(&mut rng, 7, 16);
        let residual = random_matrix(&mut rng, 7, 16);
        let weight: Vec<f32> = (0..16).map(|_| rng.random_range(0.5f32..1.5)).collect();
        let params = NormParams::new(weight.clone(), 1e-5).unwrap();
        let (out, _) = rmsnorm_residual(&input, &residual, &params).unwrap();
        let oracle = scalar_oracle(&input, &residual, &weight, 1e-5);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = TokenMatrix::zeros(2, 4).unwrap();
        let b = TokenMatrix::zeros(3, 4).unwrap();
        let params = NormParams::ones(4).unwrap();
        assert!(matches!(
            rmsnorm_residual(&a, &b, &params),
            Err(Error::Dimension(_))
        ));
        let short = NormParams::ones(3).unwrap();
        assert!(matches!(
            rmsnorm_residual(&a, &a, &short),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut a = TokenMatrix::zeros(2, 4).unwrap();
        a.row_mut(1)[2] = f32::NAN;
        let b = TokenMatrix::zeros(2, 4).unwrap();
        let params = NormParams::ones(4).unwrap();
        assert_eq!(
            rmsnorm_residual(&a, &b, &params),
            Err(Error::NonFinite {
                what: "input",
                token: 1,
                index: 2
            })
        );
        let mut c = TokenMatrix::zeros(2, 4).unwrap();
        c.row_mut(0)[0] = f32::INFINITY;
        assert!(matches!(
            rmsnorm_residual(&b, &c, &params),
            Err(Error::NonFinite {
                what: "residual",
                ..
            })
        ));
    }

    #[test]
    fn constructor_validates_length() {
        assert!(TokenMatrix::new(2, 3, vec![0.0; 5]).is_err());
        assert!(TokenMatrix::new(0, 3, vec![]).is_ok());
        assert!(TokenMatrix::new(1, 0, vec![]).is_err());
        assert!(NormParams::new(vec![1.0], -1.0).is_err());
    }

    fn matrix_strategy(t: usize, h: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-3.0f32..3.0, t * h)
    }

    proptest! {
        #[test]
        fn scale_covariance_at_zero_epsilon(
            a in matrix_strategy(4, 8),
            b in matrix_strategy(4, 8),
            c in 0.01f32..100.0,
        ) {
            let input = TokenMatrix::new(4, 8, a).unwrap();
            let residual = TokenMatrix::new(4, 8, b).unwrap();
            // Skip rows whose sum is (nearly) zero: RMS is undefined there.
            for t in 0..4 {
                let ss: f32 = input.row(t).iter().zip(residual.row(t)).map(|(x, y)| (x + y) * (x + y)).sum();
                prop_assume!(ss > 1e-3);
            }
            let params = NormParams::new(vec![1.0; 8], 0.0).unwrap();
            let scaled_in = TokenMatrix::new(4, 8, input.values().iter().map(|v| v * c).collect()).unwrap();
            let scaled_res = TokenMatrix::new(4, 8, residual.values().iter().map(|v| v * c).collect()).unwrap();
            let (base, _) = rmsnorm_residual(&input, &residual, &params).unwrap();
            let (scaled, _) = rmsnorm_residual(&scaled_in, &scaled_res, &params).unwrap();
            for (x, y) in base.values().iter().zip(scaled.values()) {
                prop_assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }

        #[test]
        fn token_permutation_commutes(
            a in matrix_strategy(5, 6),
            b in matrix_strategy(5, 6),
            perm in Just(vec![3usize, 0, 4, 1, 2]).prop_shuffle(),
        ) {
            let input = TokenMatrix::new(5, 6, a).unwrap();
            let residual = TokenMatrix::new(5, 6, b).unwrap();
            let params = NormParams::ones(6).unwrap();
            let (out, _) = rmsnorm_residual(&input, &residual, &params).unwrap();
            let pin = TokenMatrix::from_fn(5, 6, |t, j| input.row(perm[t])[j]).unwrap();
            let pres = TokenMatrix::from_fn(5, 6, |t, j| residual.row(perm[t])[j]).unwrap();
            let (pout, _) = rmsnorm_residual(&pin, &pres, &params).unwrap();
            for (t, &src) in perm.iter().enumerate() {
                prop_assert_eq!(pout.row(t), out.row(src));
            }
        }

        #[test]
        fn residual_out_is_exact_sum(a in matrix_strategy(3, 5), b in matrix_strategy(3, 5)) {
            let input = TokenMatrix::new(3, 5, a).unwrap();
            let residual = TokenMatrix::new(3, 5, b).unwrap();
            let (_, res) = rmsnorm_residual(&input, &residual, &NormParams::ones(5).unwrap()).unwrap();
            for ((r, x), y) in res.values().iter().zip(input.values()).zip(residual.values()) {
                prop_assert_eq!(*r, x + y);
            }
        }
    }
}
