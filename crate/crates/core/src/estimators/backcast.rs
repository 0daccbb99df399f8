//! Batch backcasting: express every measurement as a (possibly negative)
//! matrix power of the state at the initialization index and solve a
//! least-squares problem for that state.

use nalgebra::{DMatrix, DVector, Matrix5, RowDVector, Vector5};

use super::{Method, SmoothedEstimate};
use crate::error::{Error, Result};
use crate::model::{ModelMatrices, SpectralReport, N_STATES, RANK_TOL};

/// Extra correction solves in [`least_squares`].
const REFINE_STEPS: usize = 3;

/// `F` and `H` restricted to the states kept after truncation, with one
/// cached LU factorization of `F` for negative powers.
#[derive(Debug, Clone)]
pub struct BackcastModel {
    f: DMatrix<f64>,
    h: RowDVector<f64>,
    kept: Vec<usize>,
    truncated: Option<usize>,
    // Transposed LU factors for solving F^T z = g, plus the factorization itself.
    factors: Option<Factors>,
}

#[derive(Debug, Clone)]
struct Factors {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    l_t: DMatrix<f64>,
    u_t: DMatrix<f64>,
}

impl BackcastModel {
    pub fn new(mats: &ModelMatrices, truncated: Option<usize>) -> Self {
        let kept: Vec<usize> = (0..N_STATES).filter(|&i| Some(i) != truncated).collect();
        let n = kept.len();
        let f = DMatrix::from_fn(n, n, |i, j| mats.f[(kept[i], kept[j])]);
        let h = RowDVector::from_fn(n, |_, j| mats.h[kept[j]]);
        let lu = f.clone().lu();
        let factors = lu.is_invertible().then(|| Factors {
            l_t: lu.l().transpose(),
            u_t: lu.u().transpose(),
            lu,
        });
        BackcastModel {
            f,
            h,
            kept,
            truncated,
            factors,
        }
    }

    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn truncated_state(&self) -> Option<usize> {
        self.truncated
    }

    pub fn is_invertible(&self) -> bool {
        self.factors.is_some()
    }

    fn factors(&self) -> Result<&Factors> {
        self.factors.as_ref().ok_or(Error::SingularDynamics)
    }

    /// Solves `F^T z = g` with the LU factors of `F` (`P F = L U`).
    fn solve_transposed(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        let fac = self.factors()?;
        let a = fac
            .u_t
            .solve_lower_triangular(g)
            .ok_or(Error::SingularDynamics)?;
        let mut b = fac
            .l_t
            .solve_upper_triangular(&a)
            .ok_or(Error::SingularDynamics)?;
        fac.lu.p().inv_permute_rows(&mut b);
        Ok(b)
    }

    /// Rows `H F^e` for `e = lo..=hi`.
    pub fn output_powers(&self, lo: i64, hi: i64) -> Result<Vec<RowDVector<f64>>> {
        assert!(lo <= hi);
        let mut rows = Vec::with_capacity((hi - lo + 1) as usize);
        if lo < 0 {
            // Built outward from e = -1 by repeated transposed solves.
            let mut neg = Vec::with_capacity((-lo) as usize);
            let mut g = self.h.transpose();
            for e in (lo..0).rev() {
                g = self.solve_transposed(&g)?;
                if e <= hi {
                    neg.push(g.transpose());
                }
            }
            rows.extend(neg.into_iter().rev());
        }
        let mut row = self.h.clone();
        for e in 0..=hi {
            if e >= lo {
                rows.push(row.clone());
            }
            row = &row * &self.f;
        }
        Ok(rows)
    }

    /// `F^e x` for any integer `e`.
    pub fn propagate(&self, x: &DVector<f64>, e: i64) -> Result<DVector<f64>> {
        let mut x = x.clone();
        if e >= 0 {
            for _ in 0..e {
                x = &self.f * x;
            }
        } else {
            let lu = &self.factors()?.lu;
            for _ in 0..(-e) {
                x = lu.solve(&x).ok_or(Error::SingularDynamics)?;
            }
        }
        Ok(x)
    }

    /// Full 5-vector with zeros at the truncated state.
    pub fn expand(&self, x: &DVector<f64>) -> Vector5<f64> {
        let mut full = Vector5::zeros();
        for (i, &k) in self.kept.iter().enumerate() {
            full[k] = x[i];
        }
        full
    }

    pub fn reduce_matrix(&self, q: &Matrix5<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| q[(self.kept[i], self.kept[j])])
    }
}

/// Stacked rows `H F^{k-m}` for `k = k_min..=d` and the matching measurements.
#[derive(Debug, Clone)]
pub struct PhiSystem {
    pub phi: DMatrix<f64>,
    pub y: DVector<f64>,
    pub k_min: usize,
    pub m: usize,
    pub d: usize,
    pub truncated_state: Option<usize>,
    pub model: BackcastModel,
}

impl PhiSystem {
    pub fn rows(&self) -> usize {
        self.phi.nrows()
    }
}

pub fn build_phi(
    mats: &ModelMatrices,
    y: &[f64],
    m: usize,
    d: usize,
    k_min: usize,
    spectral: &SpectralReport,
) -> Result<PhiSystem> {
    if !(k_min <= m && m <= d) {
        return Err(Error::InvalidInput(format!(
            "need k_min <= m <= d, got k_min={k_min}, m={m}, d={d}"
        )));
    }
    if y.len() < d + 1 {
        return Err(Error::InvalidInput(format!(
            "measurement series has {} points, need at least d + 1 = {}",
            y.len(),
            d + 1
        )));
    }
    let model = BackcastModel::new(mats, spectral.near_zero_state);
    if k_min < m && !model.is_invertible() {
        return Err(Error::SingularDynamics);
    }

    let lo = k_min as i64 - m as i64;
    let hi = d as i64 - m as i64;
    let rows = model.output_powers(lo, hi)?;
    let n = model.dim();
    let phi = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "backcasting matrix overflowed; raise k_min".into(),
        ));
    }
    let y = DVector::from_iterator(d - k_min + 1, y[k_min..=d].iter().copied());
    Ok(PhiSystem {
        phi,
        y,
        k_min,
        m,
        d,
        truncated_state: model.truncated_state(),
        model,
    })
}

fn column_scales(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.ncols(),
        a.column_iter().map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        }),
    )
}

/// Unconstrained least squares with column equilibration and a
/// rank check at relative tolerance `RANK_TOL`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scales = column_scales(a);
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    let svd = scaled.clone().svd(true, true);
    let max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * max)
        .count();
    if rank < a.ncols() || max == 0.0 {
        return Err(Error::RankDeficient {
            rank,
            cols: a.ncols(),
        });
    }
    let solve = |rhs: &DVector<f64>| {
        svd.solve(rhs, RANK_TOL * max)
            .map_err(|e| Error::InvalidInput(e.to_string()))
    };
    let mut z = solve(b)?;
    // Iterative refinement; graded designs lose digits in a single solve.
    for _ in 0..REFINE_STEPS {
        let dz = solve(&(b - &scaled * &z))?;
        let done = dz.norm() <= f64::EPSILON * z.norm();
        z += dz;
        if done {
            break;
        }
    }
    Ok(z.component_div(&scales))
}

/// Lawson-Hanson active-set solver for `min ||A x - b||` subject to `x >= 0`.
pub fn nonnegative_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    // Rank check on the full problem, so the error matches the unconstrained path.
    least_squares(a, b)?;

    let scales = column_scales(a);
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    let a = scaled;

    let tol = 1e-12 * a.norm() * b.norm().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - &a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match candidate {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }

        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&idx);
            let s_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-14)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            if s_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (i, &j) in idx.iter().enumerate() {
                    x[j] = s_sub[i];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (i, &j) in idx.iter().enumerate() {
                if s_sub[i] <= 0.0 {
                    let step = x[j] / (x[j] - s_sub[i]);
                    alpha = alpha.min(step);
                }
            }
            for (i, &j) in idx.iter().enumerate() {
                x[j] += alpha * (s_sub[i] - x[j]);
                if x[j] <= 1e-15 * scales.max() {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(x.component_div(&scales))
}

pub fn ols_estimate(sys: &PhiSystem, nonneg: bool) -> Result<SmoothedEstimate> {
    let x = if nonneg {
        nonnegative_least_squares(&sys.phi, &sys.y)?
    } else {
        least_squares(&sys.phi, &sys.y)?
    };
    Ok(SmoothedEstimate {
        m: sys.m,
        x: sys.model.expand(&x),
        cov: None,
        method: Method::Ols,
        iterations: 0,
        converged: true,
        objective: vec![(&sys.y - &sys.phi * &x).norm_squared()],
    })
}
