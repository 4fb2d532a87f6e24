//! Sparse kernels for the saddle-point solves: CSR storage, a bandwidth
//! reducing ordering, a banded Cholesky factorization for the elliptic
//! blocks, and a projected conjugate-gradient loop for the pressure Schur
//! complement. Everything is sequential and deterministic: identical inputs
//! produce bit-identical outputs.

use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr<S> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<S>,
}

impl<S: Real> Csr<S> {
    /// Build from unsorted triplets, summing duplicates.
    ///
    /// The stable sort keeps insertion order within each (row, col) slot, so
    /// accumulation order — and therefore the floating-point result — does
    /// not depend on hash maps or thread scheduling.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, S)>,
    ) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; n_rows];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                let k = val.len() - 1;
                val[k] += v;
            } else {
                col.push(c);
                val.push(v);
                counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for r in 0..n_rows {
            row_ptr[r + 1] = row_ptr[r] + counts[r];
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col,
            val,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn matvec(&self, x: &[S], y: &mut [S]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = S::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[S], y: &mut [S]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(y.len(), self.n_cols);
        for v in y.iter_mut() {
            *v = S::zero();
        }
        for r in 0..self.n_rows {
            let xr = x[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col[k]] += self.val[k] * xr;
            }
        }
    }

    /// Entry lookup (rows are sorted by column).
    pub fn get(&self, r: usize, c: usize) -> S {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col[lo..hi].binary_search(&c) {
            Ok(k) => self.val[lo + k],
            Err(_) => S::zero(),
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected adjacency structure.
///
/// Returns `order` such that `order[k]` is the original index placed at
/// position `k`. Ties are broken by index, so the result is deterministic.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // lowest-degree unvisited seed
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i));
        let Some(seed) = seed else { break };
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular banded Cholesky factor of a symmetric positive definite
/// matrix.
pub struct BandedCholesky<S> {
    n: usize,
    bw: usize,
    /// Row-major band storage: entry (i, j) with d = i - j in 0..=bw lives at
    /// `l[i * (bw + 1) + d]`.
    l: Vec<S>,
}

impl<S: Real> BandedCholesky<S> {
    /// Factor the matrix given by `entry(i, j)` over the band implied by the
    /// sparsity visitor `bw`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> S) -> Result<Self, String> {
        let w = bw + 1;
        let mut l = vec![S::zero(); n * w];
        for i in 0..n {
            let j_lo = i.saturating_sub(bw);
            for j in j_lo..=i {
                let mut sum = entry(i, j);
                let k_lo = j.saturating_sub(bw).max(j_lo);
                for k in k_lo..j {
                    sum -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j < i {
                    let d = l[j * w];
                    l[i * w + (i - j)] = sum / d;
                } else {
                    if sum <= S::zero() || !sum.is_finite() {
                        return Err(format!("non-positive pivot {sum} at row {i}"));
                    }
                    l[i * w] = sum.sqrt();
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn solve_in_place(&self, x: &mut [S]) {
        let w = self.bw + 1;
        // forward: L z = b
        for i in 0..self.n {
            let j_lo = i.saturating_sub(self.bw);
            let mut acc = x[i];
            for j in j_lo..i {
                acc -= self.l[i * w + (i - j)] * x[j];
            }
            x[i] = acc / self.l[i * w];
        }
        // backward: L^T x = z
        for i in (0..self.n).rev() {
            let mut acc = x[i];
            let j_hi = (i + self.bw).min(self.n - 1);
            for j in (i + 1)..=j_hi {
                acc -= self.l[j * w + (j - i)] * x[j];
            }
            x[i] = acc / self.l[i * w];
        }
    }
}

/// Outcome of the projected conjugate-gradient loop.
pub struct CgOutcome<S> {
    pub iterations: usize,
    pub residual: S,
}

/// Preconditioned CG for a singular-consistent SPD operator whose kernel is
/// the constant vector. Iterates are kept orthogonal to the kernel by mean
/// removal.
pub fn projected_pcg<S: Real>(
    apply: impl Fn(&[S], &mut [S]),
    precond: impl Fn(&[S], &mut [S]),
    b: &[S],
    x: &mut [S],
    rtol: S,
    max_iter: usize,
) -> Result<CgOutcome<S>, String> {
    let n = b.len();
    let remove_mean = |v: &mut [S]| {
        let mean = v.iter().copied().sum::<S>() / S::of_usize(n);
        for vi in v.iter_mut() {
            *vi -= mean;
        }
    };
    let norm = |v: &[S]| v.iter().map(|&x| x * x).sum::<S>().sqrt();

    let mut r = b.to_vec();
    remove_mean(&mut r);
    let b_norm = norm(&r);
    if b_norm == S::zero() {
        for xi in x.iter_mut() {
            *xi = S::zero();
        }
        return Ok(CgOutcome {
            iterations: 0,
            residual: S::zero(),
        });
    }
    for xi in x.iter_mut() {
        *xi = S::zero();
    }
    let mut z = vec![S::zero(); n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = r.iter().zip(&z).map(|(&a, &b)| a * b).sum::<S>();
    let mut q = vec![S::zero(); n];
    for it in 0..max_iter {
        apply(&p, &mut q);
        let pq = p.iter().zip(&q).map(|(&a, &b)| a * b).sum::<S>();
        if !(pq > S::zero()) {
            return Err(format!("indefinite Schur operator: p^T A p = {pq}"));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        remove_mean(&mut r);
        let res = norm(&r);
        if res <= rtol * b_norm {
            return Ok(CgOutcome {
                iterations: it + 1,
                residual: res / b_norm,
            });
        }
        precond(&r, &mut z);
        let rz_new = r.iter().zip(&z).map(|(&a, &b)| a * b).sum::<S>();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(format!(
        "pressure solve did not converge in {max_iter} iterations"
    ))
}
