//! Dense non-negative least squares: `min ‖A x − b‖₂  s.t.  x ≥ 0`.
//!
//! Lawson–Hanson active-set method. Passive-set subproblems are solved with a
//! Householder QR of the selected columns; columns are normalized to unit
//! length first, which leaves the feasible set unchanged.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnlsError {
    #[error("dimension mismatch: matrix is {rows}x{cols}, rhs has {rhs} entries")]
    Dimensions { rows: usize, cols: usize, rhs: usize },
    #[error("matrix has a zero or non-finite column {0}")]
    BadColumn(usize),
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `‖A x − b‖₂²`
    pub rss: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Least squares on the given columns via Householder QR.
/// Returns `None` if the columns are numerically rank deficient.
fn lstsq_columns(cols: &[&[f64]], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let p = cols.len();
    if p == 0 {
        return Some(Vec::new());
    }
    if p > m {
        return None;
    }
    let mut a: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
    let mut rhs = b.to_vec();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    for k in 0..p {
        let alpha = norm(&a[k][k..]);
        if alpha <= 1e-13 * scale {
            return None;
        }
        let sign = if a[k][k] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] += sign * alpha;
        let vv = dot(&v, &v);
        for col in a.iter_mut().skip(k) {
            let f = 2.0 * dot(&v, &col[k..]) / vv;
            for (ci, vi) in col[k..].iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
        let f = 2.0 * dot(&v, &rhs[k..]) / vv;
        for (ri, vi) in rhs[k..].iter_mut().zip(&v) {
            *ri -= f * vi;
        }
    }
    let mut z = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = ((k + 1)..p).map(|j| a[j][k] * z[j]).sum();
        z[k] = (rhs[k] - s) / a[k][k];
    }
    Some(z)
}

/// Solve `min ‖A x − b‖₂ s.t. x ≥ 0`.
pub fn nnls(a: &DenseMatrix, b: &[f64]) -> Result<NnlsSolution, NnlsError> {
    let (m, n) = (a.rows, a.cols);
    if b.len() != m {
        return Err(NnlsError::Dimensions { rows: m, cols: n, rhs: b.len() });
    }
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut col_norm = Vec::with_capacity(n);
    for j in 0..n {
        let c = a.column(j);
        let nrm = norm(&c);
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(NnlsError::BadColumn(j));
        }
        cols.push(c.iter().map(|v| v / nrm).collect());
        col_norm.push(nrm);
    }
    let b_norm = norm(b);
    // unit columns, so every dual entry is bounded by ‖b‖
    let dual_tol = 1e-12 * b_norm.max(f64::MIN_POSITIVE);

    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut iterations = 0;
    let max_iter = 30 * (n + 1);

    let residual = |x: &[f64]| -> Vec<f64> {
        let mut r = b.to_vec();
        for (j, c) in cols.iter().enumerate() {
            if x[j] != 0.0 {
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= x[j] * ci;
                }
            }
        }
        r
    };
    let solve_passive = |passive: &[bool]| -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sel: Vec<&[f64]> = idx.iter().map(|&j| cols[j].as_slice()).collect();
        let zp = lstsq_columns(&sel, b)?;
        let mut z = vec![0.0; n];
        for (k, &j) in idx.iter().enumerate() {
            z[j] = zp[k];
        }
        Some(z)
    };

    let mut rejected = vec![false; n];
    loop {
        let r = residual(&x);
        let w: Vec<f64> = cols.iter().map(|c| dot(c, &r)).collect();
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !rejected[j] && w[j] > dual_tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(NnlsError::IterationLimit);
        }
        passive[j] = true;
        // inner loop: restore feasibility of the passive set
        loop {
            let Some(z) = solve_passive(&passive) else {
                // dependent on columns already in the passive set
                passive[j] = false;
                rejected[j] = true;
                break;
            };
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                rejected.iter_mut().for_each(|f| *f = false);
                break;
            }
            let (blocking, alpha) = (0..n)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| (i, x[i] / (x[i] - z[i])))
                .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
            for i in 0..n {
                x[i] += alpha * (z[i] - x[i]);
            }
            x[blocking] = 0.0;
            for i in 0..n {
                if passive[i] && x[i] <= 0.0 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            iterations += 1;
            if iterations > max_iter {
                return Err(NnlsError::IterationLimit);
            }
        }
    }

    // Passive entries that are pure rounding noise sit on the boundary; pin them
    // to zero and re-solve so boundary solutions come out exact.
    let noise = 1e-10 * b_norm;
    if (0..n).any(|j| passive[j] && x[j] <= noise) {
        for j in 0..n {
            if passive[j] && x[j] <= noise {
                passive[j] = false;
            }
        }
        if let Some(z) = solve_passive(&passive) {
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
            }
        }
        for j in 0..n {
            if !passive[j] {
                x[j] = 0.0;
            }
        }
    }

    let r = residual(&x);
    let rss = dot(&r, &r);
    let x = x.iter().zip(&col_norm).map(|(v, s)| v / s).collect();
    Ok(NnlsSolution { x, rss, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows.len(), rows[0].len());
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    /// Exhaustive oracle: best unconstrained solution over every support set
    /// that is feasible.
    fn brute_force(a: &DenseMatrix, b: &[f64]) -> (Vec<f64>, f64) {
        let n = a.cols();
        let cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
        let mut best = (vec![0.0; n], dot(b, b));
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            // normal equations solved by Gaussian elimination
            let p = idx.len();
            let mut g = vec![vec![0.0; p + 1]; p];
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    g[r][c] = dot(&cols[i], &cols[j]);
                }
                g[r][p] = dot(&cols[i], b);
            }
            let mut ok = true;
            for k in 0..p {
                let piv = (k..p).max_by(|&x, &y| g[x][k].abs().total_cmp(&g[y][k].abs())).unwrap();
                if g[piv][k].abs() < 1e-12 {
                    ok = false;
                    break;
                }
                g.swap(k, piv);
                for r in 0..p {
                    if r != k {
                        let f = g[r][k] / g[k][k];
                        for c in k..=p {
                            g[r][c] -= f * g[k][c];
                        }
                    }
                }
            }
            if !ok {
                continue;
            }
            let zs: Vec<f64> = (0..p).map(|k| g[k][p] / g[k][k]).collect();
            if zs.iter().any(|&v| v < 0.0) {
                continue;
            }
            let mut x = vec![0.0; n];
            for (k, &j) in idx.iter().enumerate() {
                x[j] = zs[k];
            }
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| q - p).collect();
            let rss = dot(&r, &r);
            if rss < best.1 {
                best = (x, rss);
            }
        }
        best
    }

    #[test]
    fn unconstrained_interior_solution() {
        let a = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let s = nnls(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
        assert!(s.rss < 1e-20);
    }

    #[test]
    fn negative_component_clamped_to_zero() {
        let a = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = nnls(&a, &[-1.0, 2.0]).unwrap();
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
        assert!((s.rss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_negative_rhs_gives_zero() {
        let a = mat(&[&[1.0, 1.0], &[1.0, 2.0]]);
        let s = nnls(&a, &[-1.0, -1.0]).unwrap();
        assert_eq!(s.x, vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let a = mat(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(nnls(&a, &[1.0, 1.0]), Err(NnlsError::BadColumn(1)));
        assert!(matches!(nnls(&a, &[1.0]), Err(NnlsError::Dimensions { .. })));
    }

    #[test]
    fn duplicate_columns_do_not_loop() {
        let a = mat(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        let s = nnls(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!((s.x[0] + s.x[1] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>(), m in 4usize..12, n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = DenseMatrix::zeros(m, n);
            for i in 0..m {
                for j in 0..n {
                    a.set(i, j, rng.random_range(-1.0..1.0));
                }
            }
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = nnls(&a, &b).unwrap();
            let (xo, rsso) = brute_force(&a, &b);
            prop_assert!(s.x.iter().all(|&v| v >= 0.0));
            prop_assert!((s.rss - rsso).abs() <= 1e-9 * (1.0 + rsso), "{} vs {}", s.rss, rsso);
            for (p, q) in s.x.iter().zip(&xo) {
                prop_assert!((p - q).abs() < 1e-6);
            }
        }
    }
}
