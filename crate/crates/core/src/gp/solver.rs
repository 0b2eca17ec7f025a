//! Log-barrier interior-point method for geometric programs in convex form.
//!
//! With `y = log x` the program reads
//!
//! ```text
//! minimise   f_0(y) = lse(B_0 + A_0 y)
//! subject to f_i(y) = lse(B_i + A_i y) + eps_i <= 0
//!            E y = h
//! ```
//!
//! where `eps_i` tightens strict inequalities. Each centering step minimises
//! `t f_0 - sum log(-f_i)` over the affine set by equality-constrained Newton
//! with a backtracking line search; `t` grows geometrically until the
//! duality-gap bound `m / t` drops below the tolerance. Because `f_0` is the
//! log of the original objective, the gap is a relative one. A phase-one
//! problem in the extra variable `s` (`f_i(y) <= s`) finds a strictly
//! feasible start when the supplied one is not.

use crate::linalg::lu_solve;
use crate::scalar::Scalar;

use super::{GeometricProgram, GpError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Target relative duality gap.
    pub tol: T,
    /// Log-domain slack enforced on strict inequalities.
    pub epsilon_margin: T,
    /// Barrier parameter growth factor.
    pub mu: T,
    pub max_newton: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            tol: T::tol(1e-10),
            epsilon_margin: T::c(1e-9),
            mu: T::c(20.0),
            max_newton: 5_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverStats {
    pub newton_iterations: usize,
    pub outer_iterations: usize,
    /// `m / t` at termination (relative objective gap bound).
    pub duality_gap: f64,
    /// Infinity norm of the Lagrangian gradient, equality multipliers
    /// eliminated by least squares.
    pub stationarity: f64,
    pub used_phase_one: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSolution<T> {
    pub log_x: Vec<T>,
    pub x: Vec<T>,
    /// Value of the original objective.
    pub objective: T,
    /// `log` of each inequality's left-hand side at the solution.
    pub constraint_logs: Vec<T>,
    pub stats: SolverStats,
}

/// `lse(b_j + a_j . z)`.
#[derive(Debug, Clone)]
struct Lse<T> {
    b: Vec<T>,
    a: Vec<Vec<T>>,
}

impl<T: Scalar> Lse<T> {
    fn value(&self, z: &[T]) -> T {
        let vals: Vec<T> = self.affine(z);
        crate::scalar::log_sum_exp(vals.iter().copied())
    }

    fn affine(&self, z: &[T]) -> Vec<T> {
        self.b
            .iter()
            .zip(&self.a)
            .map(|(&b, a)| a.iter().zip(z).fold(b, |acc, (&ai, &zi)| acc + ai * zi))
            .collect()
    }

    /// Value, gradient and Hessian.
    fn derivs(&self, z: &[T]) -> (T, Vec<T>, Vec<Vec<T>>) {
        let n = z.len();
        let v = self.affine(z);
        let f = crate::scalar::log_sum_exp(v.iter().copied());
        let w: Vec<T> = v.iter().map(|&x| (x - f).exp()).collect();
        let mut g = vec![T::zero(); n];
        for (wj, aj) in w.iter().zip(&self.a) {
            for k in 0..n {
                g[k] = g[k] + *wj * aj[k];
            }
        }
        let mut h = vec![vec![T::zero(); n]; n];
        for (wj, aj) in w.iter().zip(&self.a) {
            for p in 0..n {
                if aj[p] == T::zero() {
                    continue;
                }
                for q in 0..n {
                    h[p][q] = h[p][q] + *wj * aj[p] * aj[q];
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                h[p][q] = h[p][q] - g[p] * g[q];
            }
        }
        (f, g, h)
    }
}

struct ConvexForm<T> {
    nv: usize,
    objective: Lse<T>,
    ineqs: Vec<(Lse<T>, T)>,
    eq_a: Vec<Vec<T>>,
    eq_b: Vec<T>,
}

impl<T: Scalar> ConvexForm<T> {
    fn from_gp(gp: &GeometricProgram<T>, eps: T) -> Self {
        let nv = gp.num_vars();
        let lse = |terms: &[super::Monomial<T>]| Lse {
            b: terms.iter().map(|t| t.log_coeff).collect(),
            a: terms.iter().map(|t| t.dense_exponents(nv)).collect(),
        };
        ConvexForm {
            nv,
            objective: lse(&gp.objective.terms),
            ineqs: gp
                .inequalities
                .iter()
                .map(|c| (lse(&c.lhs.terms), if c.strict { eps } else { T::zero() }))
                .collect(),
            eq_a: gp.equalities.iter().map(|e| e.dense_exponents(nv)).collect(),
            eq_b: gp.equalities.iter().map(|e| -e.log_coeff).collect(),
        }
    }

    /// Phase-one form over `(y, s)`: minimise `s` subject to `f_i(y) - s <= 0`.
    fn phase_one(&self) -> Self {
        let nv = self.nv + 1;
        let extend = |a: &Vec<T>, last: T| {
            let mut v = a.clone();
            v.push(last);
            v
        };
        let mut unit = vec![T::zero(); nv];
        unit[nv - 1] = T::one();
        // s >= -1 keeps the phase-one problem bounded
        let floor = (
            Lse {
                b: vec![-T::one()],
                a: vec![unit.iter().map(|&u| -u).collect()],
            },
            T::zero(),
        );
        let mut ineqs: Vec<(Lse<T>, T)> = self
            .ineqs
            .iter()
            .map(|(f, shift)| {
                (
                    Lse {
                        b: f.b.iter().map(|&b| b + *shift).collect(),
                        a: f.a.iter().map(|a| extend(a, -T::one())).collect(),
                    },
                    T::zero(),
                )
            })
            .collect();
        ineqs.push(floor);
        ConvexForm {
            nv,
            objective: Lse {
                b: vec![T::zero()],
                a: vec![unit],
            },
            ineqs,
            eq_a: self.eq_a.iter().map(|a| extend(a, T::zero())).collect(),
            eq_b: self.eq_b.clone(),
        }
    }

    fn constraint_values(&self, z: &[T]) -> Vec<T> {
        self.ineqs.iter().map(|(f, s)| f.value(z) + *s).collect()
    }

    fn max_constraint(&self, z: &[T]) -> T {
        self.constraint_values(z)
            .into_iter()
            .fold(T::neg_infinity(), T::max)
    }

    fn barrier(&self, z: &[T], t: T) -> T {
        let mut phi = t * self.objective.value(z);
        for (f, s) in &self.ineqs {
            let v = f.value(z) + *s;
            if !(v < T::zero()) {
                return T::infinity();
            }
            phi = phi - (-v).ln();
        }
        phi
    }

    fn barrier_derivs(&self, z: &[T], t: T) -> (Vec<T>, Vec<Vec<T>>) {
        let n = self.nv;
        let (_, g0, h0) = self.objective.derivs(z);
        let mut g: Vec<T> = g0.iter().map(|&x| t * x).collect();
        let mut h: Vec<Vec<T>> = h0.iter().map(|r| r.iter().map(|&x| t * x).collect()).collect();
        for (f, s) in &self.ineqs {
            let (v, gi, hi) = f.derivs(z);
            let neg = -(v + *s);
            let inv = T::one() / neg;
            let inv2 = inv * inv;
            for p in 0..n {
                g[p] = g[p] + gi[p] * inv;
                for q in 0..n {
                    h[p][q] = h[p][q] + hi[p][q] * inv + gi[p] * gi[q] * inv2;
                }
            }
        }
        (g, h)
    }

    /// Newton step restricted to the null space `F` of the equality
    /// constraints: `(F^T H F) w = -F^T g`, step `F w`.
    fn newton_step(&self, basis: &[Vec<T>], g: &[T], h: &[Vec<T>]) -> Option<Vec<T>> {
        let n = self.nv;
        let k = basis.len();
        if k == 0 {
            return Some(vec![T::zero(); n]);
        }
        // hf[j] = H f_j
        let hf: Vec<Vec<T>> = basis
            .iter()
            .map(|f| (0..n).map(|i| h[i].iter().zip(f).map(|(&a, &b)| a * b).sum()).collect())
            .collect();
        let hr: Vec<Vec<T>> = (0..k)
            .map(|a| (0..k).map(|b| basis[a].iter().zip(&hf[b]).map(|(&x, &y)| x * y).sum()).collect())
            .collect();
        let gr: Vec<T> = basis.iter().map(|f| -f.iter().zip(g).map(|(&x, &y)| x * y).sum::<T>()).collect();
        let w = spd_solve(hr, gr)?;
        let mut dz = vec![T::zero(); n];
        for (f, &wj) in basis.iter().zip(&w) {
            for i in 0..n {
                dz[i] = dz[i] + f[i] * wj;
            }
        }
        Some(dz)
    }

    /// Basis of `{d : E d = 0}` from the reduced row echelon form of `E`.
    fn null_space(&self) -> Result<Vec<Vec<T>>, GpError> {
        let n = self.nv;
        let mut e = self.eq_a.clone();
        let p = e.len();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == p {
                break;
            }
            let best = (row..p).max_by(|&a, &b| {
                e[a][col]
                    .abs()
                    .partial_cmp(&e[b][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let Some(best) = best else { break };
            if e[best][col].abs() <= T::tol(1e-12) {
                continue;
            }
            e.swap(row, best);
            let piv = e[row][col];
            for v in e[row].iter_mut() {
                *v = *v / piv;
            }
            for r in 0..p {
                if r != row && e[r][col] != T::zero() {
                    let f = e[r][col];
                    for c in 0..n {
                        let v = e[row][c];
                        e[r][c] = e[r][c] - f * v;
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        if pivots.len() < p {
            return Err(GpError::Malformed("equality constraints are linearly dependent".into()));
        }
        let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        Ok(free
            .iter()
            .map(|&f| {
                let mut v = vec![T::zero(); n];
                v[f] = T::one();
                for (r, &pc) in pivots.iter().enumerate() {
                    v[pc] = -e[r][f];
                }
                v
            })
            .collect())
    }

    /// Projects `z` onto `E z = h` (least-norm correction).
    fn project(&self, z: &mut [T]) -> Result<(), GpError> {
        let p = self.eq_a.len();
        if p == 0 {
            return Ok(());
        }
        let resid: Vec<T> = self
            .eq_a
            .iter()
            .zip(&self.eq_b)
            .map(|(a, &b)| a.iter().zip(z.iter()).map(|(&x, &y)| x * y).sum::<T>() - b)
            .collect();
        let gram: Vec<Vec<T>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| self.eq_a[i].iter().zip(&self.eq_a[j]).map(|(&x, &y)| x * y).sum())
                    .collect()
            })
            .collect();
        let w = lu_solve(gram, resid)
            .ok_or_else(|| GpError::Malformed("equality constraints are linearly dependent".into()))?;
        for (i, zi) in z.iter_mut().enumerate() {
            let corr: T = (0..p).map(|e| self.eq_a[e][i] * w[e]).sum();
            *zi = *zi - corr;
        }
        Ok(())
    }

    /// Infinity norm of the Lagrangian gradient projected on the null space
    /// of the equalities, with the central-path multipliers `1 / (t (-f_i))`.
    fn stationarity(&self, basis: &[Vec<T>], z: &[T], t: T) -> T {
        let n = self.nv;
        let (_, g0, _) = self.objective.derivs(z);
        let mut r = g0;
        for (f, s) in &self.ineqs {
            let (v, gi, _) = f.derivs(z);
            let lam = T::one() / (t * (-(v + *s)));
            for k in 0..n {
                r[k] = r[k] + lam * gi[k];
            }
        }
        basis
            .iter()
            .map(|f| f.iter().zip(&r).map(|(&a, &b)| a * b).sum::<T>().abs())
            .fold(T::zero(), T::max)
    }
}

/// Solves `a x = b` for symmetric positive (semi)definite `a` by Cholesky
/// after symmetric diagonal scaling, adding a growing ridge if needed.
fn spd_solve<T: Scalar>(a: Vec<Vec<T>>, b: Vec<T>) -> Option<Vec<T>> {
    let k = b.len();
    let d: Vec<T> = (0..k)
        .map(|i| {
            let v = a[i][i];
            if v > T::zero() && v.is_finite() {
                T::one() / v.sqrt()
            } else {
                T::one()
            }
        })
        .collect();
    let scaled: Vec<Vec<T>> = (0..k)
        .map(|i| (0..k).map(|j| a[i][j] * d[i] * d[j]).collect())
        .collect();
    let rhs: Vec<T> = (0..k).map(|i| b[i] * d[i]).collect();
    let mut ridge = T::zero();
    for _ in 0..12 {
        if let Some(x) = cholesky_solve(&scaled, &rhs, ridge) {
            return Some(x.iter().zip(&d).map(|(&xi, &di)| xi * di).collect());
        }
        ridge = if ridge == T::zero() { T::tol(1e-14) } else { ridge * T::c(100.0) };
    }
    None
}

fn cholesky_solve<T: Scalar>(a: &[Vec<T>], b: &[T], ridge: T) -> Option<Vec<T>> {
    let k = b.len();
    let mut l = vec![vec![T::zero(); k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i][j];
            if i == j {
                s = s + ridge;
            }
            for p in 0..j {
                s = s - l[i][p] * l[j][p];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![T::zero(); k];
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s = s - l[i][p] * y[p];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s = s - l[p][i] * x[p];
        }
        x[i] = s / l[i][i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

enum Centering {
    Converged,
    /// Phase one reached strict feasibility.
    Feasible,
    Stalled,
}

struct Barrier<'a, T> {
    form: &'a ConvexForm<T>,
    basis: Vec<Vec<T>>,
    newton_iterations: usize,
    max_newton: usize,
}

impl<T: Scalar> Barrier<'_, T> {
    /// Minimises the barrier function at fixed `t`, updating `z` in place.
    /// With `phase_one = Some(k)` it stops as soon as the first `k`
    /// coordinates satisfy the original constraints.
    fn center(&mut self, z: &mut Vec<T>, t: T, phase_one: Option<&ConvexForm<T>>) -> Centering {
        let tol = T::tol(1e-12);
        for _ in 0..200 {
            if self.newton_iterations >= self.max_newton {
                return Centering::Stalled;
            }
            self.newton_iterations += 1;
            let (g, h) = self.form.barrier_derivs(z, t);
            let Some(dz) = self.form.newton_step(&self.basis, &g, &h) else {
                return Centering::Stalled;
            };
            let decrement: T = -g.iter().zip(&dz).map(|(&a, &b)| a * b).sum::<T>();
            if !(decrement.is_finite()) {
                return Centering::Stalled;
            }
            if decrement * T::c(0.5) <= tol {
                return Centering::Converged;
            }
            let phi0 = self.form.barrier(z, t);
            let slope = -decrement;
            // keep single steps within a sane range of log-scale moves
            let longest = dz.iter().fold(T::zero(), |m, d| m.max(d.abs()));
            let mut step = (T::c(20.0) / longest).min(T::one());
            let mut accepted = false;
            for _ in 0..80 {
                let cand: Vec<T> = z.iter().zip(&dz).map(|(&a, &b)| a + step * b).collect();
                let phi = self.form.barrier(&cand, t);
                if phi.is_finite() && phi <= phi0 + T::c(0.01) * step * slope {
                    *z = cand;
                    accepted = true;
                    break;
                }
                step = step * T::c(0.5);
            }
            if !accepted {
                // no progress possible at this precision
                return Centering::Converged;
            }
            if let Some(orig) = phase_one {
                if orig.max_constraint(&z[..orig.nv]) < T::zero() {
                    return Centering::Feasible;
                }
            }
        }
        Centering::Converged
    }
}

/// Solves a geometric program; returns the optimum in the original variables.
pub fn solve<T: Scalar>(gp: &GeometricProgram<T>, opts: &SolverOptions<T>) -> Result<GpSolution<T>, GpError> {
    gp.validate()?;
    let form = ConvexForm::from_gp(gp, opts.epsilon_margin);
    let nv = form.nv;
    let mut stats = SolverStats::default();

    let mut y = gp.initial_log.clone().unwrap_or_else(|| vec![T::zero(); nv]);
    form.project(&mut y)?;

    if form.max_constraint(&y) >= T::zero() {
        stats.used_phase_one = true;
        let p1 = form.phase_one();
        let s0 = form.max_constraint(&y) + T::one();
        if !s0.is_finite() {
            return Err(GpError::Malformed("initial point is not finite".into()));
        }
        let mut z = y.clone();
        z.push(s0);
        let mut b = Barrier {
            form: &p1,
            basis: p1.null_space()?,
            newton_iterations: 0,
            max_newton: opts.max_newton,
        };
        let m = T::of_usize(p1.ineqs.len());
        let mut t = T::one();
        let mut found = false;
        loop {
            match b.center(&mut z, t, Some(&form)) {
                Centering::Feasible => {
                    found = true;
                    break;
                }
                Centering::Stalled => break,
                Centering::Converged => {}
            }
            stats.outer_iterations += 1;
            if m / t < T::tol(1e-12) {
                break;
            }
            t = t * opts.mu;
        }
        stats.newton_iterations += b.newton_iterations;
        if !found {
            return Err(GpError::Infeasible {
                bound: z[nv].f64(),
            });
        }
        y = z[..nv].to_vec();
    }

    let m = T::of_usize(form.ineqs.len());
    let basis = form.null_space()?;
    let mut b = Barrier {
        form: &form,
        basis: basis.clone(),
        newton_iterations: 0,
        max_newton: opts.max_newton,
    };
    let mut t = if m > T::zero() { T::one() } else { T::c(1e12) };
    loop {
        let res = b.center(&mut y, t, None);
        stats.outer_iterations += 1;
        if let Centering::Stalled = res {
            stats.newton_iterations += b.newton_iterations;
            let x: Vec<f64> = y.iter().map(|v| v.exp().f64()).collect();
            return Err(GpError::Convergence {
                iterations: stats.newton_iterations,
                gap: (m / t).f64(),
                incumbent: x,
                p_star: None,
            });
        }
        if m == T::zero() || m / t < opts.tol {
            break;
        }
        t = t * opts.mu;
    }
    stats.newton_iterations += b.newton_iterations;
    stats.duality_gap = if m > T::zero() { (m / t).f64() } else { 0.0 };
    stats.stationarity = form.stationarity(&basis, &y, t).f64();

    let constraint_logs = gp.inequalities.iter().map(|c| c.lhs.log_eval(&y)).collect();
    Ok(GpSolution {
        x: y.iter().map(|v| v.exp()).collect(),
        objective: gp.objective.log_eval(&y).exp(),
        log_x: y,
        constraint_logs,
        stats,
    })
}
