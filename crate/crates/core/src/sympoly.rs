//! Elementary symmetric coefficients and the power-sum transfer recursion.
//!
//! For base points `b_1..b_H`, `coeffs[r]` below is the coefficient of
//! `t^{H-r}` in `prod_i (t + b_i)` (an elementary symmetric polynomial).
//! These coefficients annihilate high power sums: for `n > H`,
//!
//! ```text
//! sum_{r=0}^{H} (-1)^r C_r (sum_i a_i b_i^{n-r}) = 0,
//! ```
//!
//! which turns into a linear recursion expressing any moment
//! `sum_i a_i b_i^n` through the first `H` moments:
//! `F_i^{(n)} = delta_{n,i}` for `n <= H` and
//! `F_i^{(n)} = sum_{r=1}^{H} (-1)^{r+1} C_r F_i^{(n-r)}` otherwise. The
//! multidimensional transfer coefficient is the per-coordinate product
//! `F_r^{(n)} = prod_m F_{r_m}^{(n_m)}`.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SymPolyError {
    #[error("need at least one base point")]
    EmptyBasePoints,
    #[error("annihilation identity requires n > H (n = {n}, H = {h})")]
    IndexNotAboveDegree { n: usize, h: usize },
    #[error("transfer coefficients are defined for n >= 1")]
    IndexZero,
    #[error("base-point matrix is ragged or empty")]
    RaggedMatrix,
}

/// Elementary symmetric coefficients of a set of base points.
#[derive(Debug, Clone)]
pub struct SymCoeffs {
    base: Vec<f64>,
    coeffs: Vec<f64>,
}

impl SymCoeffs {
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Coefficients `C_0..C_H` in descending powers of `t`; `C_0 = 1`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.base.len()
    }

    /// Evaluates `prod_i (t + b_i)` through the coefficients.
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, &c| acc * t + c)
    }
}

/// Coefficients of `prod_i (t + b_i)` by incremental convolution.
pub fn elem_sym_coeffs(base: &[f64]) -> Result<SymCoeffs, SymPolyError> {
    if base.is_empty() {
        return Err(SymPolyError::EmptyBasePoints);
    }
    let mut coeffs = vec![1.0];
    for &b in base {
        coeffs.push(0.0);
        for r in (1..coeffs.len()).rev() {
            coeffs[r] += b * coeffs[r - 1];
        }
    }
    Ok(SymCoeffs {
        base: base.to_vec(),
        coeffs,
    })
}

/// Residual of the annihilation identity
/// `sum_{r=0}^{H} (-1)^r C_r (sum_i a_i b_i^{n-r})` for `n > H`.
/// Exactly zero in real arithmetic; callers compare against a scale built
/// from the absolute version of the same sum.
pub fn annihilation_residual(a: &[f64], base: &[f64], n: usize) -> Result<f64, SymPolyError> {
    let h = base.len();
    if n <= h {
        return Err(SymPolyError::IndexNotAboveDegree { n, h });
    }
    let sym = elem_sym_coeffs(base)?;
    let mut residual = 0.0;
    for (r, &c) in sym.coeffs().iter().enumerate() {
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        let moment: f64 = a
            .iter()
            .zip(base)
            .map(|(&ai, &bi)| ai * bi.powi((n - r) as i32))
            .sum();
        residual += sign * c * moment;
    }
    Ok(residual)
}

/// Magnitude scale for the annihilation residual:
/// `sum_r |C_r| sum_i |a_i| |b_i|^{n-r}`.
pub fn annihilation_scale(a: &[f64], base: &[f64], n: usize) -> Result<f64, SymPolyError> {
    let h = base.len();
    if n <= h {
        return Err(SymPolyError::IndexNotAboveDegree { n, h });
    }
    let sym = elem_sym_coeffs(base)?;
    let mut scale = 0.0;
    for (r, &c) in sym.coeffs().iter().enumerate() {
        let moment: f64 = a
            .iter()
            .zip(base)
            .map(|(&ai, &bi)| ai.abs() * bi.abs().powi((n - r) as i32))
            .sum();
        scale += c.abs() * moment;
    }
    Ok(scale)
}

/// Table of transfer coefficients `F_i^{(n)}` for `i in [1:H]`, `n in [1:N]`,
/// built bottom-up in `n`.
#[derive(Debug, Clone)]
pub struct FTable {
    base: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl FTable {
    /// Builds rows `1..=max_n` for the given base points.
    pub fn build(base: &[f64], max_n: usize) -> Result<Self, SymPolyError> {
        if base.is_empty() {
            return Err(SymPolyError::EmptyBasePoints);
        }
        if max_n == 0 {
            return Err(SymPolyError::IndexZero);
        }
        let h = base.len();
        let sym = elem_sym_coeffs(base)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            if n <= h {
                let mut row = vec![0.0; h];
                row[n - 1] = 1.0;
                rows.push(row);
            } else {
                let mut row = vec![0.0; h];
                for r in 1..=h {
                    let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
                    let c = sym.coeffs()[r];
                    let prev = &rows[n - r - 1];
                    for i in 0..h {
                        row[i] += sign * c * prev[i];
                    }
                }
                rows.push(row);
            }
        }
        Ok(Self {
            base: base.to_vec(),
            rows,
        })
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Row `n` (1-based): the coefficients `F_1^{(n)}..F_H^{(n)}`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n - 1]
    }

    pub fn max_n(&self) -> usize {
        self.rows.len()
    }

    /// Growth bound `R = H * prod_i (1 + |b_i|)`; every entry satisfies
    /// `|F_i^{(n)}| < R^n`.
    pub fn growth_bound(&self) -> f64 {
        let h = self.base.len() as f64;
        h * self.base.iter().map(|&b| 1.0 + b.abs()).product::<f64>()
    }
}

/// Transfer coefficients `F_1^{(n)}..F_H^{(n)}` for a single dimension.
pub fn f_coeffs(base: &[f64], n: usize) -> Result<Vec<f64>, SymPolyError> {
    let table = FTable::build(base, n)?;
    Ok(table.row(n).to_vec())
}

/// Sparse multidimensional transfer coefficients: maps each index vector
/// `r in [1:H]^M` with a nonzero coefficient to
/// `prod_m F_{r_m}^{(n_m)}(column m)`.
///
/// Stored sparsely because for `n_m <= H` the factor is a Kronecker delta and
/// the dense table explodes with `M`.
pub fn f_coeffs_multi(
    base_columns: &[Vec<f64>],
    n: &[usize],
) -> Result<BTreeMap<Vec<usize>, f64>, SymPolyError> {
    if base_columns.is_empty() || base_columns.iter().any(|c| c.is_empty()) {
        return Err(SymPolyError::RaggedMatrix);
    }
    let h = base_columns[0].len();
    if base_columns.iter().any(|c| c.len() != h) {
        return Err(SymPolyError::RaggedMatrix);
    }
    if n.len() != base_columns.len() {
        return Err(SymPolyError::RaggedMatrix);
    }
    if n.iter().any(|&nm| nm == 0) {
        return Err(SymPolyError::IndexZero);
    }
    // Nonzero (index, value) factors per coordinate.
    let mut factors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n.len());
    for (col, &nm) in base_columns.iter().zip(n) {
        let row = f_coeffs(col, nm)?;
        let nz: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i + 1, v))
            .collect();
        factors.push(nz);
    }
    let mut out = BTreeMap::new();
    let mut idx = vec![0usize; factors.len()];
    'outer: loop {
        let mut key = Vec::with_capacity(idx.len());
        let mut val = 1.0;
        for (m, &i) in idx.iter().enumerate() {
            let (r, v) = factors[m][i];
            key.push(r);
            val *= v;
        }
        out.insert(key, val);
        let mut m = 0;
        loop {
            if m == idx.len() {
                break 'outer;
            }
            idx[m] += 1;
            if idx[m] < factors[m].len() {
                break;
            }
            idx[m] = 0;
            m += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn two_point_coefficients() {
        // (t + b1)(t + b2) = t^2 + (b1 + b2) t + b1 b2
        let s = elem_sym_coeffs(&[3.0, 5.0]).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 8.0, 15.0]);
        let s = elem_sym_coeffs(&[1.0, 2.0]).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn zero_points_give_pure_power() {
        let s = elem_sym_coeffs(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.coeffs(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            elem_sym_coeffs(&[]),
            Err(SymPolyError::EmptyBasePoints)
        ));
    }

    #[test]
    fn vieta_product_check() {
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let h = 1 + rng.gen_range(0..6);
            let base: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = elem_sym_coeffs(&base).unwrap();
            for _ in 0..5 {
                let t: f64 = rng.gen_range(-3.0..3.0);
                let direct: f64 = base.iter().map(|&b| t + b).product();
                let via = s.eval(t);
                let scale = base
                    .iter()
                    .map(|&b| t.abs() + b.abs())
                    .product::<f64>()
                    .max(1.0);
                assert!((direct - via).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn annihilation_single_point() {
        // H=1, a=[1], b=[2], n=2: 1*4 - 2*2 = 0
        let r = annihilation_residual(&[1.0], &[2.0], 2).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn annihilation_zero_weights() {
        let r = annihilation_residual(&[0.0, 0.0, 0.0], &[1.0, -0.5, 2.0], 7).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn annihilation_random_instances() {
        let mut rng = rng_from_seed(17);
        for _ in 0..500 {
            let h = 1 + rng.gen_range(0..6);
            let n = h + 1 + rng.gen_range(0..(20 - h));
            let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let res = annihilation_residual(&a, &b, n).unwrap();
            let scale = annihilation_scale(&a, &b, n).unwrap().max(1e-300);
            assert!(
                res.abs() <= 1e-9 * scale,
                "residual {res} vs scale {scale} (H={h}, n={n})"
            );
        }
    }

    #[test]
    fn annihilation_requires_n_above_degree() {
        assert!(annihilation_residual(&[1.0, 1.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn f_rows_are_deltas_up_to_degree() {
        let base = [0.5, 1.5, 2.5];
        for n in 1..=3 {
            let row = f_coeffs(&base, n).unwrap();
            for (i, &v) in row.iter().enumerate() {
                assert_eq!(v, if i + 1 == n { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn f_single_point_is_geometric() {
        // H=1, b=[c]: a c^n = c^{n-1} (a c)
        let c = 1.7f64;
        for n in 1..=10 {
            let row = f_coeffs(&[c], n).unwrap();
            assert!((row[0] - c.powi(n as i32 - 1)).abs() < 1e-12 * c.powi(n as i32));
        }
    }

    #[test]
    fn f_two_point_worked_example() {
        // H=2, b=[1,2], n=3: a1 + 8 a2 = -2 (a1 + 2 a2) + 3 (a1 + 4 a2)
        let row = f_coeffs(&[1.0, 2.0], 3).unwrap();
        assert_eq!(row, vec![-2.0, 3.0]);
    }

    /// Direct check of the reconstruction identity
    /// `sum_i a_i b_i^n = sum_i F_i^{(n)} (sum_j a_j b_j^i)`.
    fn reconstruction_residual(a: &[f64], b: &[f64], n: usize) -> (f64, f64) {
        let h = b.len();
        let lhs: f64 = a
            .iter()
            .zip(b)
            .map(|(&ai, &bi)| ai * bi.powi(n as i32))
            .sum();
        let row = f_coeffs(b, n).unwrap();
        let mut rhs = 0.0;
        let mut scale = lhs.abs();
        for i in 1..=h {
            let moment: f64 = a
                .iter()
                .zip(b)
                .map(|(&aj, &bj)| aj * bj.powi(i as i32))
                .sum();
            rhs += row[i - 1] * moment;
            scale += (row[i - 1] * moment).abs();
        }
        (lhs - rhs, scale.max(1e-300))
    }

    #[test]
    fn reconstruction_random_instances() {
        let mut rng = rng_from_seed(23);
        for _ in 0..500 {
            let h = 1 + rng.gen_range(0..6);
            let n = 1 + rng.gen_range(0..20);
            let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..h).map(|_| rng.gen_range(0.01..3.0)).collect();
            let (res, scale) = reconstruction_residual(&a, &b, n);
            assert!(
                res.abs() <= 1e-8 * scale,
                "residual {res} vs {scale} (H={h}, n={n})"
            );
        }
    }

    #[test]
    fn f_table_growth_bound_holds() {
        let mut rng = rng_from_seed(29);
        for _ in 0..100 {
            let h = 1 + rng.gen_range(0..6);
            let base: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let table = FTable::build(&base, 20).unwrap();
            let r = table.growth_bound();
            for n in 1..=table.max_n() {
                for &v in table.row(n) {
                    assert!(v.abs() < r.powi(n as i32), "|F|={} vs R^n={}", v.abs(), r.powi(n as i32));
                }
            }
        }
    }

    #[test]
    fn multi_reduces_to_single_dimension() {
        let base = vec![vec![0.7, 2.2]];
        for n in 1..=8 {
            let sparse = f_coeffs_multi(&base, &[n]).unwrap();
            let dense = f_coeffs(&base[0], n).unwrap();
            for (i, &v) in dense.iter().enumerate() {
                let got = sparse.get(&vec![i + 1]).copied().unwrap_or(0.0);
                assert!((got - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_low_index_is_single_delta() {
        let base = vec![vec![0.5, 1.5], vec![2.0, 3.0]];
        let sparse = f_coeffs_multi(&base, &[2, 1]).unwrap();
        assert_eq!(sparse.len(), 1);
        assert_eq!(sparse.get(&vec![2, 1]).copied(), Some(1.0));
    }

    /// Residual of the multidimensional reconstruction identity for random
    /// weights, evaluated directly from the definition.
    fn multi_reconstruction_residual(
        a: &[f64],
        rows: &[Vec<f64>],
        n: &[usize],
    ) -> (f64, f64) {
        let m = n.len();
        let columns: Vec<Vec<f64>> = (0..m)
            .map(|j| rows.iter().map(|row| row[j]).collect())
            .collect();
        let lhs: f64 = a
            .iter()
            .zip(rows)
            .map(|(&ai, row)| {
                ai * row
                    .iter()
                    .zip(n)
                    .map(|(&b, &nm)| b.powi(nm as i32))
                    .product::<f64>()
            })
            .sum();
        let sparse = f_coeffs_multi(&columns, n).unwrap();
        let mut rhs = 0.0;
        let mut scale = lhs.abs();
        for (rvec, coeff) in &sparse {
            let moment: f64 = a
                .iter()
                .zip(rows)
                .map(|(&aj, row)| {
                    aj * row
                        .iter()
                        .zip(rvec)
                        .map(|(&b, &rm)| b.powi(rm as i32))
                        .product::<f64>()
                })
                .sum();
            rhs += coeff * moment;
            scale += (coeff * moment).abs();
        }
        (lhs - rhs, scale.max(1e-300))
    }

    #[test]
    fn multi_reconstruction_random_instances() {
        let mut rng = rng_from_seed(37);
        for _ in 0..500 {
            let h = 1 + rng.gen_range(0..4);
            let m = 1 + rng.gen_range(0..3);
            let n: Vec<usize> = (0..m).map(|_| 1 + rng.gen_range(0..8)).collect();
            let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let rows: Vec<Vec<f64>> = (0..h)
                .map(|_| (0..m).map(|_| rng.gen_range(0.01..3.0)).collect())
                .collect();
            let (res, scale) = multi_reconstruction_residual(&a, &rows, &n);
            assert!(
                res.abs() <= 1e-8 * scale,
                "residual {res} vs {scale} (H={h}, M={m}, n={n:?})"
            );
        }
    }
}
