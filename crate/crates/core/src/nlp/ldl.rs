//! Sparse LDLᵀ factorization of symmetric quasi-definite matrices.
//!
//! Up-looking factorization on an AMD-permuted upper triangle. The symbolic
//! part (ordering, elimination tree, column counts) is computed once per
//! sparsity pattern; numeric factorizations reuse it. Inertia is read off the
//! signs of `D`.

use std::fmt;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot(pub usize);

impl fmt::Display for SingularPivot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "zero pivot at column {}", self.0)
    }
}

/// Pattern analysis for a fixed upper-triangular entry list.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    perm: Vec<usize>,
    ap: Vec<usize>,
    ai: Vec<usize>,
    /// Position in the permuted CSC value array of each input entry.
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NumericLdl {
    ax: Vec<f64>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    // scratch
    y_vals: Vec<f64>,
    y_idx: Vec<usize>,
    elim: Vec<usize>,
    marked: Vec<bool>,
    next: Vec<usize>,
    work: Vec<f64>,
}

impl SymbolicLdl {
    /// `entries` are `(row, col)` pairs of the matrix; lower entries are
    /// mirrored, duplicates are summed during factorization.
    pub fn analyze(n: usize, entries: &[(usize, usize)]) -> SymbolicLdl {
        // Upper CSC of the unpermuted pattern, with the diagonal forced in.
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in entries {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            cols[c].push(r);
        }
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(j);
            c.sort_unstable();
            c.dedup();
        }
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::new();
        for j in 0..n {
            ai.extend_from_slice(&cols[j]);
            ap[j + 1] = ai.len();
        }
        let perm = if n > 0 {
            match amd::order(n, &ap, &ai, &amd::Control::default()) {
                Ok((p, _, _)) => p,
                Err(_) => (0..n).collect(),
            }
        } else {
            Vec::new()
        };
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }

        // Permuted upper CSC.
        let mut pcols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for j in 0..n {
            for &i in &cols[j] {
                let (a, b) = (pinv[i], pinv[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                pcols[c].push(r);
            }
        }
        for c in pcols.iter_mut() {
            c.sort_unstable();
        }
        let mut pap = vec![0usize; n + 1];
        let mut pai = Vec::new();
        for j in 0..n {
            pai.extend_from_slice(&pcols[j]);
            pap[j + 1] = pai.len();
        }
        let find = |r: usize, c: usize| -> usize {
            let col = &pai[pap[c]..pap[c + 1]];
            pap[c] + col.binary_search(&r).expect("entry present in permuted pattern")
        };
        let map = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (pinv[i], pinv[j]);
                let (r, c) = if a <= b { (a, b) } else { (b, a) };
                find(r, c)
            })
            .collect();

        // Elimination tree and column counts of L.
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            for &i0 in &pai[pap[j]..pap[j + 1]] {
                let mut i = i0;
                while i != j && flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        SymbolicLdl {
            n,
            perm,
            ap: pap,
            ai: pai,
            map,
            etree,
            lp,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn numeric(&self) -> NumericLdl {
        let n = self.n;
        let nnz = self.lp[n];
        NumericLdl {
            ax: vec![0.0; self.ai.len()],
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            y_vals: vec![0.0; n],
            y_idx: vec![0; n],
            elim: vec![0; n],
            marked: vec![false; n],
            next: vec![0; n],
            work: vec![0.0; n],
        }
    }

    /// Factor the matrix whose entries (in `analyze` order) are `values`.
    /// Pivots with magnitude below `pivot_tol` count as zero.
    pub fn factor(&self, values: &[f64], f: &mut NumericLdl, pivot_tol: f64) -> Result<Inertia, SingularPivot> {
        let n = self.n;
        f.ax.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in values.iter().enumerate() {
            f.ax[self.map[k]] += v;
        }
        for i in 0..n {
            f.next[i] = self.lp[i];
            f.marked[i] = false;
            f.y_vals[i] = 0.0;
        }
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
        };
        for k in 0..n {
            let mut nnz_y = 0;
            f.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    f.d[k] = f.ax[p];
                    continue;
                }
                f.y_vals[b] = f.ax[p];
                if !f.marked[b] {
                    f.marked[b] = true;
                    f.elim[0] = b;
                    let mut ne = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if f.marked[nx] {
                            break;
                        }
                        f.marked[nx] = true;
                        f.elim[ne] = nx;
                        ne += 1;
                        nx = self.etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        f.y_idx[nnz_y] = f.elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = f.y_idx[t];
                let end = f.next[c];
                let yc = f.y_vals[c];
                for j in self.lp[c]..end {
                    f.y_vals[f.li[j]] -= f.lx[j] * yc;
                }
                f.li[end] = k;
                let l = yc * f.dinv[c];
                f.lx[end] = l;
                f.d[k] -= yc * l;
                f.next[c] += 1;
                f.y_vals[c] = 0.0;
                f.marked[c] = false;
            }
            let dk = f.d[k];
            if !dk.is_finite() || dk.abs() <= pivot_tol {
                return Err(SingularPivot(self.perm[k]));
            }
            if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            f.dinv[k] = 1.0 / dk;
        }
        Ok(inertia)
    }

    /// Solve `A x = b` in place (original ordering).
    pub fn solve(&self, f: &mut NumericLdl, b: &mut [f64]) {
        let n = self.n;
        let x = &mut f.work;
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[f.li[j]] -= f.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= f.dinv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= f.lx[j] * x[f.li[j]];
            }
            x[i] = xi;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }
}

/// `y = A x` for the symmetric matrix given as an entry list (each
/// off-diagonal entry stands for both triangles).
pub fn sym_matvec(n: usize, entries: &[(usize, usize)], values: &[f64], x: &[f64], y: &mut [f64]) {
    y[..n].iter_mut().for_each(|v| *v = 0.0);
    for (&(i, j), &v) in entries.iter().zip(values) {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
            let mut r = r.clone();
            r.push(bi);
            r
        }).collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    }

    #[test]
    fn quasi_definite_solve_and_inertia() {
        // [H  A^T; A  -d]: 3 positive, 2 negative eigenvalues.
        let entries = vec![(0, 0), (1, 1), (2, 2), (1, 0), (3, 0), (3, 2), (4, 1), (4, 2), (3, 3), (4, 4)];
        let values = vec![4.0, 3.0, 5.0, 1.0, 1.0, 2.0, 1.0, -1.0, -1e-3, -2.0];
        let n = 5;
        let sym = SymbolicLdl::analyze(n, &entries);
        let mut num = sym.numeric();
        let inertia = sym.factor(&values, &mut num, 0.0).unwrap();
        assert_eq!(inertia.positive, 3);
        assert_eq!(inertia.negative, 2);
        let mut dense = vec![vec![0.0; n]; n];
        for (&(i, j), &v) in entries.iter().zip(&values) {
            dense[i][j] += v;
            if i != j {
                dense[j][i] += v;
            }
        }
        let b = vec![1.0, -2.0, 0.5, 3.0, 1.5];
        let mut x = b.clone();
        sym.solve(&mut num, &mut x);
        let oracle = dense_solve(&dense, &b);
        for (a, o) in x.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-10, "{a} vs {o}");
        }
    }

    #[test]
    fn zero_pivot_reported() {
        let entries = vec![(0, 0), (1, 1)];
        let sym = SymbolicLdl::analyze(2, &entries);
        let mut num = sym.numeric();
        assert!(sym.factor(&[1.0, 0.0], &mut num, 0.0).is_err());
    }
}
