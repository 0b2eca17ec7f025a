//! Small dense linear algebra: LU solves, and max-plus tools used to rescale
//! nonnegative matrices whose entries span hundreds of orders of magnitude.

use crate::scalar::Scalar;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot vanishes.
pub fn lu_solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |m, &x| m.max(x.abs()));
    let tiny = scale * T::epsilon() * T::of_usize(n.max(1));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if !(a[piv][col].abs() > tiny) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - f * v;
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s = s - a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

pub fn mat_vec<T: Scalar>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter()
        .map(|r| r.iter().zip(x).map(|(&u, &v)| u * v).sum())
        .collect()
}

pub fn transpose<T: Scalar>(a: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

/// Maximum cycle mean of the weighted digraph with an edge `i -> j` of
/// weight `w[i][j]` for every finite entry (Karp's algorithm, all nodes as
/// sources). `-inf` if the graph is acyclic.
pub fn max_cycle_mean<T: Scalar>(w: &[Vec<T>]) -> T {
    let n = w.len();
    let ninf = T::neg_infinity();
    // d[k][v]: max weight of a walk with exactly k edges ending at v
    let mut d = vec![vec![ninf; n]; n + 1];
    d[0].iter_mut().for_each(|x| *x = T::zero());
    for k in 1..=n {
        for u in 0..n {
            if d[k - 1][u] == ninf {
                continue;
            }
            for v in 0..n {
                let e = w[u][v];
                if e == ninf {
                    continue;
                }
                let cand = d[k - 1][u] + e;
                if cand > d[k][v] {
                    d[k][v] = cand;
                }
            }
        }
    }
    let mut best = ninf;
    for v in 0..n {
        if d[n][v] == ninf {
            continue;
        }
        let mut worst = T::infinity();
        for k in 0..n {
            if d[k][v] == ninf {
                continue;
            }
            let mean = (d[n][v] - d[k][v]) / T::of_usize(n - k);
            if mean < worst {
                worst = mean;
            }
        }
        if worst > best {
            best = worst;
        }
    }
    best
}

/// Diagonal log-scaling `p` such that `w[i][j] + p[i] - p[j] <= mu` for every
/// finite edge, where `mu` is the maximum cycle mean. Applying it is a
/// similarity transform, so spectra are unchanged.
pub fn max_plus_potentials<T: Scalar>(w: &[Vec<T>], mu: T) -> Vec<T> {
    let n = w.len();
    if mu == T::neg_infinity() {
        return vec![T::zero(); n];
    }
    // longest paths under reduced weights w - mu (no positive cycles)
    let mut dist = vec![T::zero(); n];
    for _ in 0..=n {
        let mut changed = false;
        for u in 0..n {
            for v in 0..n {
                let e = w[u][v];
                if e == T::neg_infinity() {
                    continue;
                }
                let cand = dist[u] + e - mu;
                if cand > dist[v] + T::epsilon() * (T::one() + dist[v].abs()) {
                    dist[v] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // edge i->j reduced: w_ij - mu + dist_i - dist_j <= 0, so p = dist
    dist
}

/// Moduli of all eigenvalues of a real square matrix (dense Schur
/// decomposition, f64).
pub fn eigenvalue_moduli(a: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let eig = m.try_schur(f64::EPSILON, 10_000)?.complex_eigenvalues();
    Some(eig.iter().map(|z| z.norm()).collect())
}
