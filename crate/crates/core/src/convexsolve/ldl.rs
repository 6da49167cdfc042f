//! Sparse LDLᵀ factorization for quasi-definite KKT matrices.
//!
//! The matrix is given once as an upper-triangular sparsity pattern; numeric
//! values are refreshed on every interior-point iteration. Pivots whose sign
//! disagrees with the expected inertia are replaced by a small value of the
//! right sign, so the factorization never breaks down on the nearly singular
//! systems that appear close to the optimum.

const NONE: usize = usize::MAX;

pub(super) struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    // permuted upper triangle in CSC form
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    // original entry index -> slot in `ax`
    map: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    signs: Vec<f64>,
    y_vals: Vec<f64>,
    y_idx: Vec<usize>,
    elim: Vec<usize>,
    marked: Vec<bool>,
    next: Vec<usize>,
    pub(super) dyn_eps: f64,
    pub(super) dyn_delta: f64,
}

impl LdlFactor {
    /// `entries` lists distinct `(row, col)` pairs with `row <= col`; every
    /// diagonal entry must be present. `signs` gives the expected sign of
    /// each pivot in the original ordering.
    pub(super) fn new(n: usize, entries: &[(usize, usize)], signs: &[f64]) -> Self {
        // full symmetric pattern for the ordering
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(r, c) in entries {
            debug_assert!(r <= c);
            cols[c].push(r);
            if r != c {
                cols[r].push(c);
            }
        }
        let mut fp = Vec::with_capacity(n + 1);
        let mut fi = Vec::new();
        fp.push(0);
        for col in cols.iter_mut() {
            col.sort_unstable();
            col.dedup();
            fi.extend_from_slice(col);
            fp.push(fi.len());
        }
        let (perm, pinv) = match amd::order(n, &fp, &fi, &amd::Control::default()) {
            Ok((p, pinv, _)) => (p, pinv),
            Err(_) => ((0..n).collect(), (0..n).collect()),
        };

        let mut pcols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (k, &(r, c)) in entries.iter().enumerate() {
            let (a, b) = (pinv[r], pinv[c]);
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            pcols[j].push((i, k));
        }
        let mut ap = Vec::with_capacity(n + 1);
        let mut ai = Vec::with_capacity(entries.len());
        let mut map = vec![0; entries.len()];
        ap.push(0);
        for col in pcols.iter_mut() {
            col.sort_unstable();
            for &(i, k) in col.iter() {
                map[k] = ai.len();
                ai.push(i);
            }
            ap.push(ai.len());
        }

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for j in 0..n {
            lp.push(lp[j] + lnz[j]);
        }
        let nnz_l = lp[n];
        let psigns = perm.iter().map(|&o| signs[o]).collect();

        LdlFactor {
            n,
            perm,
            ax: vec![0.0; ai.len()],
            ap,
            ai,
            map,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            signs: psigns,
            y_vals: vec![0.0; n],
            y_idx: vec![0; n],
            elim: vec![0; n],
            marked: vec![false; n],
            next: vec![0; n],
            dyn_eps: 1e-13,
            dyn_delta: 2e-7,
        }
    }

    /// Numeric factorization. `values` follows the order of the entries given
    /// to [`LdlFactor::new`]. Returns the number of regularized pivots.
    pub(super) fn factor(&mut self, values: &[f64]) -> usize {
        let n = self.n;
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in values.iter().enumerate() {
            self.ax[self.map[k]] += v;
        }
        self.next[..n].copy_from_slice(&self.lp[..n]);
        let mut bumped = 0;
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let bidx = self.ai[p];
                if bidx == k {
                    self.d[k] += self.ax[p];
                    continue;
                }
                self.y_vals[bidx] += self.ax[p];
                if !self.marked[bidx] {
                    self.marked[bidx] = true;
                    self.elim[0] = bidx;
                    let mut n_elim = 1;
                    let mut nxt = self.etree[bidx];
                    while nxt != NONE && nxt < k {
                        if self.marked[nxt] {
                            break;
                        }
                        self.marked[nxt] = true;
                        self.elim[n_elim] = nxt;
                        n_elim += 1;
                        nxt = self.etree[nxt];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        self.y_idx[nnz_y] = self.elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = self.y_idx[i];
                let slot = self.next[c];
                let yc = self.y_vals[c];
                for j in self.lp[c]..slot {
                    self.y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[slot] = k;
                self.lx[slot] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[slot];
                self.next[c] += 1;
                self.y_vals[c] = 0.0;
                self.marked[c] = false;
            }
            if self.d[k] * self.signs[k] <= self.dyn_eps {
                self.d[k] = self.signs[k] * self.dyn_delta;
                bumped += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        bumped
    }

    /// Solves with the current factors, overwriting `b` with the solution.
    pub(super) fn solve(&self, b: &mut [f64]) {
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.dinv[i];
        }
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (i, &o) in self.perm.iter().enumerate() {
            b[o] = x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve_on_random_quasi_definite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let nx = rng.random_range(1..8);
            let ny = rng.random_range(0..nx + 1);
            let n = nx + ny;
            let mut dense = DMatrix::<f64>::zeros(n, n);
            let mut entries = Vec::new();
            let mut values = Vec::new();
            for j in 0..n {
                for i in 0..=j {
                    let diag = i == j;
                    let both_x = j < nx;
                    let coupling = i < nx && j >= nx;
                    if !diag && !(both_x || coupling) {
                        continue;
                    }
                    if !diag && rng.random_bool(0.4) {
                        continue;
                    }
                    let v = if diag {
                        if j < nx {
                            rng.random_range(1.0..3.0) + nx as f64
                        } else {
                            -rng.random_range(1.0..3.0)
                        }
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                    entries.push((i, j));
                    values.push(v);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
            }
            let signs: Vec<f64> = (0..n).map(|i| if i < nx { 1.0 } else { -1.0 }).collect();
            let mut f = LdlFactor::new(n, &entries, &signs);
            assert_eq!(f.factor(&values), 0);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            let r = &dense * DVector::from_vec(x) - DVector::from_vec(b);
            assert!(r.amax() < 1e-10, "residual {}", r.amax());
        }
    }

    #[test]
    fn wrong_sign_pivot_is_regularized() {
        let entries = [(0, 0), (1, 1)];
        let mut f = LdlFactor::new(2, &entries, &[1.0, -1.0]);
        assert_eq!(f.factor(&[0.0, 1.0]), 2);
        let mut b = [2e-7, -2e-7];
        f.solve(&mut b);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }
}
