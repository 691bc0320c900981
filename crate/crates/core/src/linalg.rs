//! Small dense linear algebra over `f64`.
//!
//! Everything here targets the tiny dimensions of this crate (state vectors
//! of a handful of coordinates, transition matrices over a few states):
//! row-major matrices, Gaussian elimination with partial pivoting, power
//! iteration for operator norms, and a Hessenberg + double-shift QR
//! eigenvalue routine. No external linear algebra dependency.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: rows[i].len(),
                });
            }
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            let row = self.row(i);
            for j in 0..self.cols {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `a + s * b`.
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::Numerical("solve_linear: matrix not square".into()));
    }
    let n = a.rows;
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "solve_linear rhs",
            expected: n,
            got: b.len(),
        });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale_ref = m.max_abs().max(1.0);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() < 1e-14 * scale_ref {
            return Err(Error::Numerical(format!(
                "solve_linear: singular system (pivot {:.3e} at column {col})",
                m[(piv, col)]
            )));
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            m[(r, col)] = 0.0;
            for j in col + 1..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= m[(col, j)] * x[j];
        }
        x[col] = acc / m[(col, col)];
    }
    Ok(x)
}

/// Spectral (operator 2-)norm via power iteration on `AᵀA`.
///
/// Deterministic: fixed start vector, fixed iteration count. Accurate to
/// well below 1e-6 relative for the small well-conditioned matrices used
/// here.
pub fn operator_norm(a: &Mat) -> f64 {
    let n = a.cols;
    if n == 0 || a.rows == 0 {
        return 0.0;
    }
    let at = a.transpose();
    // slight index-dependent tilt so the start is never orthogonal to the
    // dominant eigenvector of AᵀA
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.013 * (i as f64 + 1.0)).collect();
    let nv = norm(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }
    let mut lambda = 0.0;
    for _ in 0..300 {
        let w = at.matvec(&a.matvec(&v));
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        lambda = dot(&v, &w);
        v = scale(&w, 1.0 / nw);
    }
    lambda.max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Eigenvalues: Hessenberg reduction + double-shift QR
// ---------------------------------------------------------------------------

/// Reduce to upper Hessenberg form by stabilized elementary similarity
/// transformations (pivoted elimination).
fn hessenberg(a: &Mat) -> Mat {
    let n = a.rows;
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    for m in 1..n - 1 {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..n {
            if h[(j, m - 1)].abs() > x.abs() {
                x = h[(j, m - 1)];
                i = j;
            }
        }
        if i != m {
            for j in m - 1..n {
                let tmp = h[(i, j)];
                h[(i, j)] = h[(m, j)];
                h[(m, j)] = tmp;
            }
            for j in 0..n {
                let tmp = h[(j, i)];
                h[(j, i)] = h[(j, m)];
                h[(j, m)] = tmp;
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = h[(i, m - 1)];
                if y != 0.0 {
                    y /= x;
                    h[(i, m - 1)] = 0.0;
                    for j in m..n {
                        h[(i, j)] -= y * h[(m, j)];
                    }
                    for j in 0..n {
                        h[(j, m)] += y * h[(j, i)];
                    }
                }
            }
        }
    }
    // clear below the first subdiagonal
    for i in 2..n {
        for j in 0..i - 1 {
            h[(i, j)] = 0.0;
        }
    }
    h
}

/// All eigenvalues of a real square matrix as `(re, im)` pairs, sorted by
/// real part then imaginary part.
///
/// Double-shift QR iteration on the Hessenberg form, with exceptional
/// shifts against stagnation. Intended for the tiny matrices in this crate.
pub fn eigenvalues(a: &Mat) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::Numerical("eigenvalues: matrix not square".into()));
    }
    if !a.all_finite() {
        return Err(Error::Numerical("eigenvalues: non-finite entries".into()));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(vec![]);
    }
    let mut h = hessenberg(a);
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let eps = f64::EPSILON;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += h[(i, j)].abs();
        }
    }
    if anorm == 0.0 {
        return Ok(vec![(0.0, 0.0); n]);
    }

    let mut nn: i64 = n as i64 - 1;
    let mut t = 0.0f64;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // look for a single small subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let mut s = h[(l as usize - 1, l as usize - 1)].abs()
                    + h[(l as usize, l as usize)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if h[(l as usize, l as usize - 1)].abs() <= eps * s {
                    h[(l as usize, l as usize - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let x = h[(nn as usize, nn as usize)];
            if l == nn {
                // one real root
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
                break;
            }
            let y = h[(nn as usize - 1, nn as usize - 1)];
            let w = h[(nn as usize, nn as usize - 1)] * h[(nn as usize - 1, nn as usize)];
            if l == nn - 1 {
                // a 2x2 block: real pair or complex conjugate pair
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                let x_sh = x + t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nn as usize - 1] = x_sh + z;
                    wr[nn as usize] = wr[nn as usize - 1];
                    if z != 0.0 {
                        wr[nn as usize] = x_sh - w / z;
                    }
                    wi[nn as usize - 1] = 0.0;
                    wi[nn as usize] = 0.0;
                } else {
                    wr[nn as usize - 1] = x_sh + p;
                    wr[nn as usize] = x_sh + p;
                    wi[nn as usize - 1] = -z;
                    wi[nn as usize] = z;
                }
                nn -= 2;
                break;
            }
            // no root yet: QR step
            if its == 60 {
                return Err(Error::Numerical(
                    "eigenvalues: QR iteration did not converge".into(),
                ));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 || its == 30 || its == 40 || its == 50 {
                // exceptional shift
                t += x;
                for i in 0..=nn as usize {
                    h[(i, i)] -= x;
                }
                let s = h[(nn as usize, nn as usize - 1)].abs()
                    + h[(nn as usize - 1, nn as usize - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // look for two consecutive small subdiagonal elements
            let mut m = nn - 2;
            let (mut p, mut q, mut r) = (0.0f64, 0.0f64, 0.0f64);
            while m >= l {
                let z = h[(m as usize, m as usize)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[(m as usize + 1, m as usize)] + h[(m as usize, m as usize + 1)];
                q = h[(m as usize + 1, m as usize + 1)] - z - rr - ss;
                r = h[(m as usize + 2, m as usize + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[(m as usize, m as usize - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (h[(m as usize - 1, m as usize - 1)].abs()
                        + z.abs()
                        + h[(m as usize + 1, m as usize + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                h[(i as usize, i as usize - 2)] = 0.0;
                if i != m + 2 {
                    h[(i as usize, i as usize - 3)] = 0.0;
                }
            }
            // double QR step on rows l..nn, columns m..nn
            for k in m..=nn - 1 {
                if k != m {
                    p = h[(k as usize, k as usize - 1)];
                    q = h[(k as usize + 1, k as usize - 1)];
                    r = if k != nn - 1 {
                        h[(k as usize + 2, k as usize - 1)]
                    } else {
                        0.0
                    };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        h[(k as usize, k as usize - 1)] = -h[(k as usize, k as usize - 1)];
                    }
                } else {
                    h[(k as usize, k as usize - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k as usize..=nn as usize {
                    let mut pp = h[(k as usize, j)] + q * h[(k as usize + 1, j)];
                    if k != nn - 1 {
                        pp += r * h[(k as usize + 2, j)];
                        h[(k as usize + 2, j)] -= pp * z;
                    }
                    h[(k as usize + 1, j)] -= pp * y;
                    h[(k as usize, j)] -= pp * x;
                }
                let mmin = if nn < k + 3 { nn } else { k + 3 };
                for i in l as usize..=mmin as usize {
                    let mut pp = x * h[(i, k as usize)] + y * h[(i, k as usize + 1)];
                    if k != nn - 1 {
                        pp += z * h[(i, k as usize + 2)];
                        h[(i, k as usize + 2)] -= pp * r;
                    }
                    h[(i, k as usize + 1)] -= pp * q;
                    h[(i, k as usize)] -= pp;
                }
            }
        }
    }
    let mut eigs: Vec<(f64, f64)> = wr.into_iter().zip(wi).collect();
    eigs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    Ok(eigs)
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    let eigs = eigenvalues(a)?;
    Ok(eigs.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.0)))
}

/// Solve the continuous Lyapunov equation `MᵀP + PM = -I` for symmetric P
/// via the Kronecker linear system (d² unknowns).
pub fn solve_lyapunov(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Numerical("solve_lyapunov: matrix not square".into()));
    }
    let d = m.rows;
    let n2 = d * d;
    // column-stacked vec: X[(i,j)] lives at index j*d + i
    let mut k = Mat::zeros(n2, n2);
    for i1 in 0..d {
        for i2 in 0..d {
            let row = i1 * d + i2; // block row i1 (column j of P), inner i2
            for j1 in 0..d {
                for j2 in 0..d {
                    let col = j1 * d + j2;
                    let mut v = 0.0;
                    // (I ⊗ Mᵀ): δ_{i1,j1} · Mᵀ[i2][j2]
                    if i1 == j1 {
                        v += m[(j2, i2)];
                    }
                    // (Mᵀ ⊗ I): Mᵀ[i1][j1] · δ_{i2,j2}
                    if i2 == j2 {
                        v += m[(j1, i1)];
                    }
                    k[(row, col)] = v;
                }
            }
        }
    }
    let mut rhs = vec![0.0; n2];
    for i in 0..d {
        rhs[i * d + i] = -1.0;
    }
    let sol = solve_linear(&k, &rhs)?;
    let mut p = Mat::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            p[(i, j)] = sol[j * d + i];
        }
    }
    // symmetrize against roundoff
    let pt = p.transpose();
    Ok(p.add(&pt).scale(0.5))
}
