//! Compressed sparse rows plus a banded LU for the structured-grid systems.
//!
//! Unknowns on the grid are ordered θ-fastest, so every system assembled
//! here has half-bandwidth `n_theta`. Banded elimination without pivoting is
//! stable for the M-matrices produced in upwind mode; the residual check in
//! [`solve_sparse`] catches the cases where it is not.

use std::io::Write;

use crate::error::{Error, Result};

/// Relative residual every direct solve must reach.
pub const SOLVE_RTOL: f64 = 1e-10;
const MAX_REFINE: usize = 3;

#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        Self { n, entries: Vec::with_capacity(nnz) }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    /// Sorted CSR with duplicates summed. Explicit zeros are kept so the
    /// sparsity pattern does not depend on coefficient values.
    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { n: self.n, row_ptr, col_idx, values }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// (lower, upper) half-bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Coordinate dump, one `row col value` line per stored entry.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "% {} {} {}", self.n, self.n, self.nnz())?;
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                writeln!(out, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Outcome of an M-matrix audit, row-wise.
#[derive(Clone, Debug, PartialEq)]
pub enum MMatrixViolation {
    NonPositiveDiagonal { row: usize, value: f64 },
    PositiveOffDiagonal { row: usize, col: usize, value: f64 },
    NotDominant { row: usize, diag: f64, off_sum: f64 },
}

/// Checks positive diagonal, nonpositive off-diagonals and weak row diagonal
/// dominance (relative slack `rtol`).
pub fn mmatrix_audit(a: &CsrMatrix, rtol: f64) -> std::result::Result<(), MMatrixViolation> {
    for r in 0..a.n {
        let mut diag = 0.0;
        let mut off = 0.0;
        for (c, v) in a.row(r) {
            if c == r {
                diag += v;
            } else if v > 0.0 {
                return Err(MMatrixViolation::PositiveOffDiagonal { row: r, col: c, value: v });
            } else {
                off -= v;
            }
        }
        if !(diag > 0.0) {
            return Err(MMatrixViolation::NonPositiveDiagonal { row: r, value: diag });
        }
        if diag < off * (1.0 - rtol) {
            return Err(MMatrixViolation::NotDominant { row: r, diag, off_sum: off });
        }
    }
    Ok(())
}

/// Banded LU factors (Doolittle, no pivoting) stored row-wise.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    /// max |pivot| / min |pivot|, a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let (kl, ku) = a.bandwidth();
        let n = a.n;
        let width = kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in a.row(r) {
                data[r * width + c + kl - r] += v;
            }
        }
        let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 && n > 0 {
            return Err(Error::Singular("zero matrix".into()));
        }
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        let mut pmax = 0.0_f64;
        let mut pmin = f64::INFINITY;
        for k in 0..n {
            let pivot = data[k * width + kl];
            if !(pivot.abs() > tiny) || !pivot.is_finite() {
                return Err(Error::Singular(format!(
                    "pivot {pivot:e} at row {k} (matrix scale {scale:e})"
                )));
            }
            pmax = pmax.max(pivot.abs());
            pmin = pmin.min(pivot.abs());
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku).min(n - 1);
            let (head, tail) = data.split_at_mut((k + 1) * width);
            let krow = &head[k * width..];
            // U(k, k+1..=last_col) sits at krow[kl+1 ..]
            let urow = &krow[kl + 1..kl + 1 + (last_col - k)];
            for i in k + 1..=last_row {
                let base = (i - k - 1) * width;
                let lpos = base + k + kl - i;
                let l = tail[lpos] / pivot;
                tail[lpos] = l;
                if l != 0.0 {
                    let start = base + k + 1 + kl - i;
                    for (dst, &u) in tail[start..start + urow.len()].iter_mut().zip(urow) {
                        *dst -= l * u;
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, width, data, pivot_ratio: pmax / pmin })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &self.data[i * w..];
            let mut acc = x[i];
            for j in lo..i {
                acc -= row[j + kl - i] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let row = &self.data[i * w..];
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= row[j + kl - i] * x[j];
            }
            x[i] = acc / row[kl];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Relative residual ‖Ax − b‖∞ / ‖b‖∞ (absolute when b = 0).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = inf_norm(b);
    if nb > 0.0 {
        inf_norm(&r) / nb
    } else {
        inf_norm(&r)
    }
}

/// Direct solve with iterative refinement until the relative residual is
/// below [`SOLVE_RTOL`].
pub fn solve_sparse(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = BandLu::factor(a)?;
    solve_factored(a, &lu, b)
}

pub fn solve_factored(a: &CsrMatrix, lu: &BandLu, b: &[f64]) -> Result<Vec<f64>> {
    let mut x = lu.solve(b);
    let mut res = relative_residual(a, &x, b);
    let mut passes = 0;
    while res > SOLVE_RTOL && passes < MAX_REFINE {
        let ax = a.mul_vec(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        lu.solve_in_place(&mut r);
        x.iter_mut().zip(&r).for_each(|(xi, di)| *xi += di);
        res = relative_residual(a, &x, b);
        passes += 1;
    }
    if !(res <= SOLVE_RTOL) {
        return Err(Error::Singular(format!(
            "relative residual {res:e} after {passes} refinements (pivot ratio {:e})",
            lu.pivot_ratio
        )));
    }
    Ok(x)
}
