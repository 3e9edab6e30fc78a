//! Minimal dense row-major f64 matrix with deterministic parallel kernels.
//!
//! Parallel loops split work into contiguous row ranges; every thread writes
//! a disjoint output slice and all reductions run in a fixed order, so
//! results are bitwise identical for any worker count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// self = self * a + other * b, element-wise.
    pub fn mix(&mut self, a: f64, other: &Matrix, b: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x = *x * a + *y * b;
        }
    }
}

/// Split `0..n` into at most `workers` contiguous ranges.
pub fn row_ranges(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let workers = workers.max(1).min(n.max(1));
    let base = n / workers;
    let rem = n % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Run `f` over disjoint row chunks of `out` on up to `workers` threads.
/// `f(first_row, chunk)` sees a mutable slice of whole rows starting at
/// `first_row`.
pub fn par_rows_mut<F>(out: &mut [f64], rows: usize, cols: usize, workers: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert_eq!(out.len(), rows * cols);
    let ranges = row_ranges(rows, workers);
    if ranges.len() <= 1 {
        f(0, out);
        return;
    }
    std::thread::scope(|scope| {
        let mut rest = out;
        for range in ranges {
            let (chunk, tail) = rest.split_at_mut((range.end - range.start) * cols);
            rest = tail;
            let f = &f;
            scope.spawn(move || f(range.start, chunk));
        }
    });
}

/// out = a (m x k) * b (k x n). Skips zero entries of `a`, which pays off on
/// sparse bag-of-words rows.
pub fn matmul(a: &Matrix, b: &Matrix, workers: usize) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    par_rows_mut(&mut out.data, a.rows, n, workers, |first_row, chunk| {
        for (local, out_row) in chunk.chunks_mut(n).enumerate() {
            let i = first_row + local;
            let a_row = a.row(i);
            for (kk, &av) in a_row.iter().enumerate() {
                if av != 0.0 {
                    let b_row = b.row(kk);
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
    });
    out
}

/// out = a_selected^T * b_selected over the given node rows, accumulated in
/// ascending node order within every output element. Shapes: a is (n x k),
/// b is (n x m), result (k x m).
pub fn matmul_at_b_rows(
    a: &Matrix,
    b: &Matrix,
    nodes: &[u32],
    workers: usize,
) -> Matrix {
    assert_eq!(a.rows, b.rows);
    let (k, m) = (a.cols, b.cols);
    let mut out = Matrix::zeros(k, m);
    par_rows_mut(&mut out.data, k, m, workers, |first_row, chunk| {
        for (local, out_row) in chunk.chunks_mut(m).enumerate() {
            let kk = first_row + local;
            for &node in nodes {
                let av = a.data[node as usize * k + kk];
                if av != 0.0 {
                    let b_row = b.row(node as usize);
                    for (o, &bv) in out_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_case() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = matmul(&a, &b, 1);
        assert_eq!(c.data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_bitwise_identical_across_worker_counts() {
        let mut a = Matrix::zeros(37, 23);
        let mut b = Matrix::zeros(23, 11);
        let mut state = 1u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / 1e9 - 4.0
        };
        for v in &mut a.data {
            *v = next();
        }
        for v in &mut b.data {
            *v = next();
        }
        let c1 = matmul(&a, &b, 1);
        let c4 = matmul(&a, &b, 4);
        assert_eq!(c1.data, c4.data);
    }

    #[test]
    fn transpose_product_matches_naive() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Matrix::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let nodes = vec![0u32, 2];
        let c = matmul_at_b_rows(&a, &b, &nodes, 2);
        // rows 0 and 2: [1,2]^T*1 + [5,6]^T*3
        assert_eq!(c.data, vec![16.0, 20.0]);
    }

    #[test]
    fn row_ranges_cover() {
        let r = row_ranges(10, 3);
        assert_eq!(r, vec![0..4, 4..7, 7..10]);
        assert_eq!(row_ranges(2, 8).len(), 2);
    }
}
