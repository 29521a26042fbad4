//! Sparse symmetric `L D L^T` factorization without pivoting.
//!
//! The symbolic phase (minimum-degree ordering, elimination tree, column
//! counts) depends only on the sparsity pattern and is computed once per
//! topology. The numeric phase is repeated whenever the values change, which
//! during training means once per parameter point. Indefinite matrices are
//! accepted as long as no pivot vanishes.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Relative size below which a pivot counts as zero.
const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug)]
pub struct SymbolicLdl {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    /// Permuted upper triangle (rows `<= col`), CSC.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Input entry -> slot in the permuted upper triangle.
    slot: Vec<usize>,
    /// Original (row, col) of each input entry.
    entries: Vec<(usize, usize)>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

impl SymbolicLdl {
    /// `entries` lists structurally nonzero positions `(i, j)` of an `n x n`
    /// symmetric matrix. Either triangle may be given and duplicates are summed
    /// at factorization time; values passed to [`Ldl::factor`] follow this order.
    pub fn new(n: usize, entries: &[(usize, usize)]) -> Arc<Self> {
        let perm = minimum_degree(n, entries);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // permuted upper-triangular pattern, deduplicated
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            cols[k].push(k);
        }
        for &(i, j) in entries {
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let slot = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (iperm[i], iperm[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
                col_ptr[c] + rows.binary_search(&r).expect("pattern contains entry")
            })
            .collect();

        // elimination tree and column counts of L
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &r in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
                let mut i = r;
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i].is_none() {
                        parent[i] = Some(k);
                    }
                    l_nz[i] += 1;
                    flag[i] = k;
                    i = parent[i].expect("set above");
                }
            }
        }
        let mut l_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        for k in 0..n {
            l_ptr.push(l_ptr[k] + l_nz[k]);
        }

        Arc::new(SymbolicLdl {
            n,
            perm,
            col_ptr,
            row_idx,
            slot,
            entries: entries.to_vec(),
            parent,
            l_ptr,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Nonzeros in the strictly lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }
}

#[derive(Debug, Clone)]
pub struct Ldl {
    symbolic: Arc<SymbolicLdl>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    norm1: f64,
}

impl Ldl {
    /// Numeric factorization. `values[k]` belongs to `entries[k]` of the symbolic pattern.
    pub fn factor(symbolic: &Arc<SymbolicLdl>, values: &[f64]) -> Result<Self> {
        let s = symbolic.as_ref();
        let n = s.n;
        assert_eq!(values.len(), s.slot.len(), "one value per pattern entry");

        let mut a = vec![0.0; s.row_idx.len()];
        let mut col_abs = vec![0.0; n];
        for ((&slot, &v), &(i, j)) in s.slot.iter().zip(values).zip(&s.entries) {
            a[slot] += v;
            col_abs[j] += v.abs();
            if i != j {
                col_abs[i] += v.abs();
            }
        }
        let norm1 = col_abs.iter().cloned().fold(0.0, f64::max);
        let scale = (0..n)
            .map(|k| a[s.col_ptr[k + 1] - 1].abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);

        let nnz = s.l_ptr[n];
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nz = vec![0usize; n];

        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            for p in s.col_ptr[k]..s.col_ptr[k + 1] {
                let mut i = s.row_idx[p];
                y[i] += a[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = s.parent[i].expect("row below diagonal has a parent");
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = s.l_ptr[i];
                let end = start + l_nz[i];
                for p in start..end {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[end] = k;
                l_val[end] = l_ki;
                l_nz[i] += 1;
            }
            if !(d[k].abs() > PIVOT_TOLERANCE * scale) {
                return Err(Error::SingularMatrix {
                    pivot: Some(s.perm[k]),
                    condition_estimate: f64::INFINITY,
                });
            }
        }
        Ok(Ldl { symbolic: Arc::clone(symbolic), l_idx, l_val, d, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// Number of negative pivots, i.e. the negative inertia of the matrix.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|d| **d < 0.0).count()
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let mut work = vec![0.0; self.dim()];
        self.solve_with(rhs, &mut work);
    }

    /// Solves for every column of a column-major `dim x n_rhs` block.
    pub fn solve_columns(&self, data: &mut [f64]) {
        let n = self.dim();
        if n == 0 {
            return;
        }
        assert_eq!(data.len() % n, 0);
        let mut work = vec![0.0; n];
        for col in data.chunks_exact_mut(n) {
            self.solve_with(col, &mut work);
        }
    }

    fn solve_with(&self, rhs: &mut [f64], x: &mut [f64]) {
        let s = self.symbolic.as_ref();
        let n = s.n;
        for k in 0..n {
            x[k] = rhs[s.perm[k]];
        }
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                    x[self.l_idx[p]] -= self.l_val[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in s.l_ptr[j]..s.l_ptr[j + 1] {
                acc -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = acc;
        }
        for k in 0..n {
            rhs[s.perm[k]] = x[k];
        }
    }

    /// Hager's estimate of the 1-norm condition number `||A||_1 ||A^-1||_1`.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut inv_norm = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            inv_norm = y.iter().map(|v| v.abs()).sum::<f64>();
            let mut z: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            self.solve_in_place(&mut z);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        self.norm1 * inv_norm
    }
}

/// Greedy minimum-degree ordering on the explicit elimination graph.
/// Ties go to the lowest index, so the ordering is deterministic.
fn minimum_degree(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in entries {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("nodes remain");
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
    }
    order
}
