//! Sparse symmetric linear algebra for the assembled stiffness matrices:
//! CSR storage, a geometric nested-dissection ordering, an up-looking sparse
//! Cholesky factorization and a Jacobi-preconditioned conjugate-gradient
//! fallback. Factorization failure doubles as the definiteness probe for the
//! under-integrated quadrature regimes.

use crate::fmath;
use crate::linalg::Mat;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Compressed-sparse-row symmetric matrix (full pattern stored).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Deterministic assembly from (row, col, value) triplets; duplicate
    /// entries are summed.
    pub fn from_triplets(n: usize, triplets: &[(u32, u32, f64)]) -> CsrMatrix {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut order: Vec<u32> = vec![0; triplets.len()];
        let mut fill = counts.clone();
        for (t, &(r, _, _)) in triplets.iter().enumerate() {
            order[fill[r as usize]] = t as u32;
            fill[r as usize] += 1;
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices: Vec<u32> = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        indptr.push(0);
        let mut row_entries: Vec<(u32, f64)> = Vec::new();
        for r in 0..n {
            row_entries.clear();
            for &t in &order[counts[r]..counts[r + 1]] {
                let (_, c, v) = triplets[t as usize];
                row_entries.push((c, v));
            }
            row_entries.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < row_entries.len() {
                let col = row_entries[i].0;
                let mut acc = 0.0;
                while i < row_entries.len() && row_entries[i].0 == col {
                    acc += row_entries[i].1;
                    i += 1;
                }
                indices.push(col);
                data.push(acc);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            if let Ok(k) = cols.binary_search(&(r as u32)) {
                d[r] = vals[k];
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// max |A - A^T| entrywise, for symmetry diagnostics.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let c = *c as usize;
                let (tcols, tvals) = self.row(c);
                let vt = match tcols.binary_search(&(r as u32)) {
                    Ok(k) => tvals[k],
                    Err(_) => 0.0,
                };
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c as usize)] += v;
            }
        }
        m
    }

    /// Principal submatrix on the rows/columns flagged `keep`, together with
    /// the kept original indices.
    pub fn principal_submatrix(&self, keep: &[bool]) -> (CsrMatrix, Vec<u32>) {
        assert_eq!(keep.len(), self.n);
        let mut new_id = vec![u32::MAX; self.n];
        let mut kept = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_id[i] = kept.len() as u32;
                kept.push(i as u32);
            }
        }
        let m = kept.len();
        let mut indptr = Vec::with_capacity(m + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for &old_r in &kept {
            let (cols, vals) = self.row(old_r as usize);
            for (c, v) in cols.iter().zip(vals) {
                let nc = new_id[*c as usize];
                if nc != u32::MAX {
                    indices.push(nc);
                    data.push(*v);
                }
            }
            indptr.push(indices.len());
        }
        (
            CsrMatrix {
                n: m,
                indptr,
                indices,
                data,
            },
            kept,
        )
    }
}

/// Fill-reducing ordering by recursive coordinate bisection with explicit
/// vertex separators. Returns `order` such that `order[k]` is eliminated k-th.
pub fn nested_dissection_order(a: &CsrMatrix, coords: &[[f64; 2]]) -> Vec<u32> {
    assert_eq!(coords.len(), a.n);
    let mut order = Vec::with_capacity(a.n);
    let mut part = vec![0u8; a.n]; // scratch: 1 = side A, 2 = side B
    enum Frame {
        Split(Vec<u32>),
        Emit(Vec<u32>),
    }
    let mut stack = vec![Frame::Split((0..a.n as u32).collect())];
    while let Some(frame) = stack.pop() {
        match frame {
            Frame::Emit(sep) => order.extend(sep),
            Frame::Split(set) => {
                if set.len() <= 48 {
                    order.extend(set);
                    continue;
                }
                // split along the wider bounding-box axis at the median
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for &v in &set {
                    let p = coords[v as usize];
                    for d in 0..2 {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
                let axis = usize::from(hi[1] - lo[1] > hi[0] - lo[0]);
                let mut keys: Vec<(f64, u32)> =
                    set.iter().map(|&v| (coords[v as usize][axis], v)).collect();
                keys.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
                let half = keys.len() / 2;
                for (i, &(_, v)) in keys.iter().enumerate() {
                    part[v as usize] = if i < half { 1 } else { 2 };
                }
                // separator: A-side vertices adjacent to B
                let mut side_a = Vec::with_capacity(half);
                let mut side_b = Vec::with_capacity(keys.len() - half);
                let mut sep = Vec::new();
                for &(_, v) in &keys {
                    if part[v as usize] != 1 {
                        side_b.push(v);
                        continue;
                    }
                    let (cols, _) = a.row(v as usize);
                    let touches_b = cols.iter().any(|&c| part[c as usize] == 2);
                    if touches_b {
                        sep.push(v);
                    } else {
                        side_a.push(v);
                    }
                }
                for &v in &set {
                    part[v as usize] = 0;
                }
                stack.push(Frame::Emit(sep));
                stack.push(Frame::Split(side_b));
                stack.push(Frame::Split(side_a));
            }
        }
    }
    order
}

/// Sparse Cholesky factorization P A P^T = L L^T (up-looking), with the
/// elimination-tree symbolic analysis.
pub struct SparseCholesky {
    n: usize,
    perm: Vec<u32>,
    colptr: Vec<usize>,
    rowind: Vec<u32>,
    val: Vec<f64>,
}

impl SparseCholesky {
    /// Factors the symmetric positive definite matrix under the ordering
    /// `order` (see [`nested_dissection_order`]); fails with a definiteness
    /// error on a non-positive pivot.
    pub fn factor(a: &CsrMatrix, order: &[u32]) -> Result<SparseCholesky> {
        let n = a.n;
        assert_eq!(order.len(), n);
        let mut iperm = vec![0u32; n];
        for (k, &old) in order.iter().enumerate() {
            iperm[old as usize] = k as u32;
        }
        // permuted lower-triangular row patterns (new col <= new row)
        let row_cols = |k: usize, buf: &mut Vec<u32>| {
            buf.clear();
            let old = order[k] as usize;
            let (cols, _) = a.row(old);
            for &c in cols {
                let nc = iperm[c as usize];
                if (nc as usize) < k {
                    buf.push(nc);
                }
            }
        };
        // elimination tree
        let mut parent = vec![u32::MAX; n];
        let mut ancestor = vec![u32::MAX; n];
        let mut buf = Vec::new();
        for k in 0..n {
            row_cols(k, &mut buf);
            for &j0 in &buf {
                let mut j = j0;
                while j != u32::MAX && (j as usize) < k {
                    let next = ancestor[j as usize];
                    ancestor[j as usize] = k as u32;
                    if next == u32::MAX {
                        parent[j as usize] = k as u32;
                        break;
                    }
                    j = next;
                }
            }
        }
        // Pattern of row k of L in descendant-first (topological) order.
        // Each source path is prepended in front of previously found nodes,
        // using `work` as scratch in front and result in the back; returns
        // the start of the result region.
        fn ereach(
            k: usize,
            parent: &[u32],
            mark: &mut [u32],
            work: &mut [u32],
            buf: &[u32],
        ) -> usize {
            let n = work.len();
            let mut top = n;
            mark[k] = k as u32;
            for &j0 in buf {
                let mut j = j0;
                let mut len = 0;
                while mark[j as usize] != k as u32 {
                    work[len] = j;
                    len += 1;
                    mark[j as usize] = k as u32;
                    j = parent[j as usize];
                    if j == u32::MAX {
                        break;
                    }
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    work[top] = work[len];
                }
            }
            top
        }
        // column counts via ereach
        let mut mark = vec![u32::MAX; n];
        let mut counts = vec![1usize; n]; // diagonal
        let mut work = vec![0u32; n];
        for k in 0..n {
            row_cols(k, &mut buf);
            let top = ereach(k, &parent, &mut mark, &mut work, &buf);
            for &j in &work[top..] {
                counts[j as usize] += 1;
            }
        }
        let mut colptr = vec![0usize; n + 1];
        for j in 0..n {
            colptr[j + 1] = colptr[j] + counts[j];
        }
        let nnz = colptr[n];
        let mut rowind = vec![0u32; nnz];
        let mut val = vec![0.0f64; nnz];
        let mut next: Vec<usize> = (0..n).map(|j| colptr[j] + 1).collect();
        // numeric up-looking pass
        let mut x = vec![0.0f64; n];
        for m in mark.iter_mut() {
            *m = u32::MAX;
        }
        let mut row_vals: Vec<(u32, f64)> = Vec::new();
        for k in 0..n {
            let old = order[k] as usize;
            row_vals.clear();
            let (cols, vals) = a.row(old);
            let mut akk = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                let nc = iperm[*c as usize];
                if (nc as usize) < k {
                    row_vals.push((nc, *v));
                } else if nc as usize == k {
                    akk = *v;
                }
            }
            buf.clear();
            buf.extend(row_vals.iter().map(|e| e.0));
            let top = ereach(k, &parent, &mut mark, &mut work, &buf);
            for &j in &work[top..] {
                x[j as usize] = 0.0;
            }
            for &(j, v) in &row_vals {
                x[j as usize] = v;
            }
            let mut d = akk;
            // topological order makes each x[j] final before it is consumed
            for idx in top..n {
                let j = work[idx] as usize;
                let ljj = val[colptr[j]];
                let lkj = x[j] / ljj;
                for p in colptr[j] + 1..next[j] {
                    x[rowind[p] as usize] -= val[p] * lkj;
                }
                d -= lkj * lkj;
                rowind[next[j]] = k as u32;
                val[next[j]] = lkj;
                next[j] += 1;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite("sparse Cholesky pivot"));
            }
            rowind[colptr[k]] = k as u32;
            val[colptr[k]] = fmath::sqrt(d);
        }
        Ok(SparseCholesky {
            n,
            perm: order.to_vec(),
            colptr,
            rowind,
            val,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p as usize]).collect();
        for j in 0..n {
            let yj = y[j] / self.val[self.colptr[j]];
            y[j] = yj;
            for p in self.colptr[j] + 1..self.colptr[j + 1] {
                y[self.rowind[p] as usize] -= self.val[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let mut acc = y[j];
            for p in self.colptr[j] + 1..self.colptr[j + 1] {
                acc -= self.val[p] * y[self.rowind[p] as usize];
            }
            y[j] = acc / self.val[self.colptr[j]];
        }
        let mut x = vec![0.0; n];
        for (k, &old) in self.perm.iter().enumerate() {
            x[old as usize] = y[k];
        }
        x
    }

    pub fn factor_nnz(&self) -> usize {
        self.val.len()
    }
}

/// Jacobi-preconditioned conjugate gradients; returns (solution, iterations).
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol_rel: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let dinv: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.matvec(&x);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let bnorm = crate::linalg::norm2(b).max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = crate::linalg::dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if crate::linalg::norm2(&r) <= tol_rel * bnorm {
            return Ok((x, it));
        }
        a.matvec_into(&p, &mut ap);
        let pap = crate::linalg::dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NotPositiveDefinite("conjugate gradients"));
        }
        let alpha = rz / pap;
        crate::linalg::axpy(alpha, &p, &mut x);
        crate::linalg::axpy(-alpha, &ap, &mut r);
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = crate::linalg::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if crate::linalg::norm2(&r) <= tol_rel * bnorm {
        return Ok((x, max_iter));
    }
    Err(Error::NonConvergence {
        what: "conjugate gradients",
        iterations: max_iter,
        last_iterate: x,
    })
}
