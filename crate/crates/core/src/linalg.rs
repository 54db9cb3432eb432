//! Small numerical kernels shared by the oracles: a compressed sparse row
//! matrix, uniformized exponential actions, Sturm-sequence bisection for
//! symmetric tridiagonal spectra and log-space binomials.

use nalgebra::DMatrix;

/// Relative Poisson tail at which a uniformization series is truncated.
pub const POISSON_TAIL: f64 = 1e-14;

/// Largest `c·Δt` handled by one uniformization block; keeps `e^{-cΔt}` far
/// above the subnormal range.
const MAX_BLOCK_RATE: f64 = 30.0;

/// Square matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let start = col.len();
            for (j, v) in row {
                if col.len() > start && *col.last().unwrap() == j {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[range.clone()].iter().copied().zip(self.val[range].iter().copied())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `out = v A` (row vector on the left).
    pub fn mul_left(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (j, a) in self.row(i) {
                out[j] += vi * a;
            }
        }
    }

    /// `out = A v` (column vector on the right).
    pub fn mul_right(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, a)| a * v[j]).sum();
        }
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .filter(|&(j, _)| j == i)
                    .map(|(_, v)| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Which side a vector multiplies an operator from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `v e^{tA}`: evolution of a measure.
    Left,
    /// `e^{tA} f`: evolution of a function.
    Right,
}

/// Exponential action `v e^{tA}` or `e^{tA} v` by uniformization.
///
/// `A` must have nonnegative off-diagonal entries and nonpositive row sums
/// (a generator, possibly killed). Uses `P = I + A/c` with
/// `c = 1.01·max|A_ii|`, split into blocks with `cΔt ≤ 30`, and truncates each
/// Poisson series once the remaining mass is below [`POISSON_TAIL`].
pub fn expm_action(a: &Csr, v: &[f64], t: f64, side: Side) -> Vec<f64> {
    assert!(t >= 0.0, "negative time");
    let c = 1.01 * a.max_abs_diagonal();
    if t == 0.0 || c == 0.0 {
        return v.to_vec();
    }
    let blocks = (c * t / MAX_BLOCK_RATE).ceil().max(1.0) as usize;
    let lambda = c * t / blocks as f64;
    let max_terms = (lambda + 12.0 * lambda.sqrt() + 60.0) as usize;
    let n = a.dim();
    let mut current = v.to_vec();
    let mut w = vec![0.0; n];
    let mut aw = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..blocks {
        w.copy_from_slice(&current);
        let mut weight = (-lambda).exp();
        let mut mass = weight;
        for (s, &x) in acc.iter_mut().zip(&w) {
            *s = weight * x;
        }
        let mut k = 0;
        while 1.0 - mass > POISSON_TAIL && k < max_terms {
            match side {
                Side::Left => a.mul_left(&w, &mut aw),
                Side::Right => a.mul_right(&w, &mut aw),
            }
            for (x, y) in w.iter_mut().zip(&aw) {
                *x += y / c;
            }
            k += 1;
            weight *= lambda / k as f64;
            mass += weight;
            for (s, &x) in acc.iter_mut().zip(&w) {
                *s += weight * x;
            }
        }
        current.copy_from_slice(&acc);
    }
    current
}

/// Number of eigenvalues strictly below `x` of the symmetric tridiagonal matrix
/// with diagonal `diag` and off-diagonal `off` (`off.len() == diag.len() - 1`).
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let coupling = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] / q };
        q = diag[i] - x - coupling;
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) of a symmetric tridiagonal matrix,
/// by bisection on the Sturm count.
pub fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let n = diag.len();
    assert!(k < n && off.len() + 1 == n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let radius = if i > 0 { off[i - 1].abs() } else { 0.0 }
            + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - radius);
        hi = hi.max(diag[i] + radius);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 4.0 * f64::EPSILON * scale || mid == lo || mid == hi {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `ln C(n, k)`, summed term by term.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// `C(n, k)` as a float; exact while the value fits in 53 bits.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 1..=k as u128 {
        match r.checked_mul(n as u128 - k as u128 + i) {
            Some(v) => r = v / i,
            None => return ln_binomial(n, k).exp(),
        }
    }
    r as f64
}

/// `ln Σ exp(x_i)` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
