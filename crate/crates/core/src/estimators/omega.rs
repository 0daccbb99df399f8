//! Covariance of the backcasting residuals.
//!
//! For `k >= m` the residual of `y_k = H F^{k-m} x_m + w~_k` accumulates the
//! process noise `w_m .. w_{k-1}` forward; for `k < m` it accumulates
//! `w_k .. w_{m-1}` backward through negative powers of `F`. Two residuals
//! share noise terms only when they lie on the same side of `m`, and then
//! exactly `min(|k - m|, |l - m|)` of them.
//!
//! The element formula sums over the shared terms `n = 0 .. r1 - 1` with
//! power offset `n~ = n` for `k >= m` and `n~ = -n - 1` for `k < m`. With the
//! opposite assignment the diagonal just past `m` picks up
//! `H F^{-1} Q F^{-T} H^T` instead of the one-step `H Q H^T`, which does not
//! match the forward model.

use nalgebra::{DMatrix, DVector, Matrix5, RowDVector};

use super::backcast::BackcastModel;
use crate::error::{Error, Result};
use crate::model::NoiseModel;

/// Table of `H F^e` rows for a contiguous exponent range.
#[derive(Debug, Clone)]
pub struct OutputPowers {
    lo: i64,
    rows: Vec<RowDVector<f64>>,
}

impl OutputPowers {
    pub fn new(model: &BackcastModel, lo: i64, hi: i64) -> Result<Self> {
        Ok(OutputPowers {
            lo,
            rows: model.output_powers(lo, hi)?,
        })
    }

    pub fn get(&self, e: i64) -> &RowDVector<f64> {
        &self.rows[(e - self.lo) as usize]
    }
}

#[derive(Debug, Clone)]
pub struct OmegaMatrix {
    /// Rows and columns correspond to `k = k_min..=d`.
    pub omega: DMatrix<f64>,
    pub k_min: usize,
    /// Process-noise covariances `Q_k` for `k = 0..=d` used to build `omega`.
    pub schedule: Vec<Matrix5<f64>>,
}

/// Single element `omega_{k,l}` from the closed-form sum. `schedule` holds
/// the (possibly reduced) `Q_j` and `powers` must cover `H F^e` for
/// `e` in `[min(k,l) - m, max(k,l) - m]`.
pub fn omega_element(
    k: usize,
    l: usize,
    m: usize,
    powers: &OutputPowers,
    schedule: &[DMatrix<f64>],
    r: f64,
) -> f64 {
    let (k, l, m) = (k as i64, l as i64, m as i64);
    let dk = k - m;
    let dl = l - m;
    let r1 = if dk * dl >= 0 {
        dk.abs().min(dl.abs())
    } else {
        0
    };
    let k_closer = dk.abs() <= dl.abs();

    let mut sum = 0.0;
    for n in 0..r1 {
        let nt = if k >= m { n } else { -n - 1 };
        let (r2, r3) = if k_closer {
            (nt - k + l, k - 1 - nt)
        } else {
            (nt - l + k, l - 1 - nt)
        };
        let left = powers.get(r2);
        let right = powers.get(nt);
        sum += (left * &schedule[r3 as usize] * right.transpose())[0];
    }
    if k == l {
        sum += r;
    }
    sum
}

pub fn build_omega(
    schedule: &[Matrix5<f64>],
    model: &BackcastModel,
    m: usize,
    k_min: usize,
    d: usize,
    r: f64,
) -> Result<OmegaMatrix> {
    if !(k_min <= m && m <= d) {
        return Err(Error::InvalidInput(format!(
            "need k_min <= m <= d, got k_min={k_min}, m={m}, d={d}"
        )));
    }
    if schedule.len() < d + 1 {
        return Err(Error::InvalidInput(format!(
            "covariance schedule has {} entries, need d + 1 = {}",
            schedule.len(),
            d + 1
        )));
    }
    let powers = OutputPowers::new(model, k_min as i64 - m as i64, d as i64 - m as i64)?;
    let reduced: Vec<DMatrix<f64>> = schedule.iter().map(|q| model.reduce_matrix(q)).collect();

    let size = d - k_min + 1;
    let mut omega = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in i..size {
            let v = omega_element(k_min + i, k_min + j, m, &powers, &reduced, r);
            omega[(i, j)] = v;
            omega[(j, i)] = v;
        }
    }
    Ok(OmegaMatrix {
        omega,
        k_min,
        schedule: schedule.to_vec(),
    })
}

/// `{Q(F^{k-m} x_m)}` for `k = 0..=d`, with any propagated state that has a
/// negative (or non-finite) element replaced by the zero state.
pub fn noise_schedule<N: NoiseModel + ?Sized>(
    noise: &N,
    model: &BackcastModel,
    x_m: &DVector<f64>,
    m: usize,
    d: usize,
) -> Result<Vec<Matrix5<f64>>> {
    (0..=d)
        .map(|k| {
            let x = model.expand(&model.propagate(x_m, k as i64 - m as i64)?);
            let x = if x.iter().all(|v| v.is_finite() && *v >= 0.0) {
                x
            } else {
                nalgebra::Vector5::zeros()
            };
            Ok(noise.process_cov(&x))
        })
        .collect()
}
