//! Mean-square stabilizability conditions, evaluated in the log domain.
//!
//! For a policy `P` the per-state contraction factor of the estimation error
//! over one block is
//!
//! ```text
//! d_s = (N / (g_s^2 P_s + N))^n                        scalar plant
//! d_s = prod_i (N / (g_s^2 P_{s,i} + N))^(n / l^2)       TDMA over l subsystems
//! ```
//!
//! and the plant is stabilizable iff
//!
//! ```text
//! sum_i log|lambda_i| < -(l / 2n) log E_pi[d]            IID fading
//! sum_i log|lambda_i| < -(l / 2n) log rho(Q^T D)         Markov fading
//! ```
//!
//! Margins are reported as the right-hand side minus the left-hand side.
//! `d_s` underflows double precision already for moderate `n`, so only
//! `log d_s` is ever formed.

use crate::fading::FadingError;
use crate::linalg::{eigenvalue_moduli, lu_solve, max_cycle_mean, max_plus_potentials};
use crate::model::{Channel, FadingProcess, Plant, PowerPolicy, Problem};
use crate::scalar::{log_sum_exp, weighted_log_sum_exp, Scalar};

/// Margins within this distance of zero count as the (non-stabilizable)
/// boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Maximum relative spread allowed in the slot-power balance across
/// subsystems.
pub const TDMA_TOL: f64 = 1e-6;

/// Relative accuracy targeted by [`spectral_radius`].
pub const SPECTRAL_TOL: f64 = 1e-13;

const POWER_ITERATION_BUDGET: usize = 50_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StabilityError {
    #[error("slot powers of state {state} violate the TDMA balance (log spread {spread:e})")]
    TdmaConstraintViolated { state: usize, spread: f64 },
    #[error("a plant of dimension {0} needs per-slot powers")]
    MissingSlotPowers(usize),
    #[error("policy has {got} states, channel has {expected}")]
    StateCount { expected: usize, got: usize },
    #[error("condition {condition:?} does not apply: {reason}")]
    WrongCondition {
        condition: Condition,
        reason: &'static str,
    },
    #[error("spectral radius did not converge")]
    Convergence,
    #[error("eigenvalue search needs equal eigenvalue magnitudes")]
    UnequalEigenvalues,
    #[error(transparent)]
    Fading(#[from] FadingError),
}

/// Which stabilizability condition produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    IidScalar,
    IidVector,
    MarkovScalar,
    MarkovVector,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::IidScalar => "IID_SCALAR",
            Condition::IidVector => "IID_VECTOR",
            Condition::MarkovScalar => "MARKOV_SCALAR",
            Condition::MarkovVector => "MARKOV_VECTOR",
        }
    }
}

/// `log d_s` for every channel state.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionDiagonal<T> {
    log_d: Vec<T>,
}

impl<T: Scalar> ContractionDiagonal<T> {
    pub fn log_values(&self) -> &[T] {
        &self.log_d
    }

    pub fn log(&self, s: usize) -> T {
        self.log_d[s]
    }

    /// `d_s` itself; may underflow to zero.
    pub fn value(&self, s: usize) -> T {
        self.log_d[s].exp()
    }

    pub fn len(&self) -> usize {
        self.log_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_d.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict<T> {
    pub stabilizable: bool,
    pub margin: T,
    pub condition: Condition,
}

impl<T: Scalar> StabilityVerdict<T> {
    fn from_margin(margin: T, condition: Condition) -> Self {
        StabilityVerdict {
            stabilizable: margin > T::c(BOUNDARY_TOL),
            margin,
            condition,
        }
    }
}

/// `log(N / (g^2 P + N)) = -log(1 + g^2 P / N)`.
fn log_step_factor<T: Scalar>(ch: &Channel<T>, s: usize, p: T) -> T {
    -ch.snr(s, p).ln_1p()
}

/// Per-state log contraction factors of `policy` over one block.
pub fn contraction_diagonal<T: Scalar>(
    ch: &Channel<T>,
    policy: &PowerPolicy<T>,
    plant: &Plant<T>,
) -> Result<ContractionDiagonal<T>, StabilityError> {
    let m = ch.num_states();
    if policy.num_states() != m {
        return Err(StabilityError::StateCount {
            expected: m,
            got: policy.num_states(),
        });
    }
    let l = plant.dim();
    let n = T::of_usize(ch.block_len());
    let log_d = match policy.slot_powers() {
        Some(slots) => {
            if slots.iter().any(|r| r.len() != l) {
                return Err(StabilityError::MissingSlotPowers(l));
            }
            let w = n / T::of_usize(l * l);
            slots
                .iter()
                .enumerate()
                .map(|(s, row)| row.iter().map(|&p| w * log_step_factor(ch, s, p)).sum())
                .collect()
        }
        None if l == 1 => (0..m)
            .map(|s| n * log_step_factor(ch, s, policy.power(s, 0)))
            .collect(),
        None => return Err(StabilityError::MissingSlotPowers(l)),
    };
    Ok(ContractionDiagonal { log_d })
}

/// Largest log-spread of `|lambda_i|^2 (N / (g_s^2 P_{s,i} + N))^(1/l)` across
/// subsystems, per state. States with zero gain carry no information and
/// are exempt.
pub fn tdma_spread<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Vec<T> {
    let plant = problem.plant();
    let ch = problem.channel();
    let l = plant.dim();
    if l == 1 {
        return vec![T::zero(); ch.num_states()];
    }
    let inv_l = T::one() / T::of_usize(l);
    (0..ch.num_states())
        .map(|s| {
            if ch.gain(s) == T::zero() {
                return T::zero();
            }
            let vals: Vec<T> = plant
                .eigenvalues()
                .iter()
                .enumerate()
                .map(|(i, &lam)| T::c(2.0) * lam.ln() + inv_l * log_step_factor(ch, s, policy.power(s, i)))
                .collect();
            let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
            let lo = vals.iter().copied().fold(T::infinity(), T::min);
            hi - lo
        })
        .collect()
}

fn check_tdma<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Result<(), StabilityError> {
    for (state, spread) in tdma_spread(problem, policy).into_iter().enumerate() {
        if !(spread <= T::tol(TDMA_TOL)) {
            return Err(StabilityError::TdmaConstraintViolated {
                state,
                spread: spread.f64(),
            });
        }
    }
    Ok(())
}

/// `-(l / 2n) * log_contraction - sum_i log|lambda_i|`.
fn margin_from<T: Scalar>(log_contraction: T, log_det: T, l: usize, n: usize) -> T {
    let scale = T::of_usize(l) / (T::c(2.0) * T::of_usize(n));
    -scale * log_contraction - log_det
}

/// `log E_pi[d]` for IID fading.
fn log_expected_contraction<T: Scalar>(probs: &[T], diag: &ContractionDiagonal<T>) -> T {
    weighted_log_sum_exp(probs, &diag.log_d)
}

/// Log-entries of `Q^T D`: entry `(s, r)` is `log q_rs + log d_r`.
fn log_qt_d<T: Scalar>(q: &[Vec<T>], log_d: &[T]) -> Vec<Vec<T>> {
    let m = q.len();
    (0..m)
        .map(|s| {
            (0..m)
                .map(|r| {
                    if q[r][s] > T::zero() {
                        q[r][s].ln() + log_d[r]
                    } else {
                        T::neg_infinity()
                    }
                })
                .collect()
        })
        .collect()
}

fn require(cond: bool, condition: Condition, reason: &'static str) -> Result<(), StabilityError> {
    if cond {
        Ok(())
    } else {
        Err(StabilityError::WrongCondition { condition, reason })
    }
}

/// Scalar plant, IID fading.
pub fn check_iid_scalar<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    let c = Condition::IidScalar;
    require(problem.dim() == 1, c, "plant is not scalar")?;
    let FadingProcess::Iid(probs) = problem.fading() else {
        return Err(StabilityError::WrongCondition {
            condition: c,
            reason: "fading is not IID",
        });
    };
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    let lc = log_expected_contraction(probs, &diag);
    let margin = margin_from(lc, problem.plant().log_abs_det(), 1, problem.block_len());
    Ok(StabilityVerdict::from_margin(margin, c))
}

/// Vector plant under TDMA scheduling, IID fading.
pub fn check_iid_vector<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    let c = Condition::IidVector;
    let FadingProcess::Iid(probs) = problem.fading() else {
        return Err(StabilityError::WrongCondition {
            condition: c,
            reason: "fading is not IID",
        });
    };
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    check_tdma(problem, policy)?;
    let lc = log_expected_contraction(probs, &diag);
    let margin = margin_from(lc, problem.plant().log_abs_det(), problem.dim(), problem.block_len());
    Ok(StabilityVerdict::from_margin(margin, c))
}

fn markov_matrix<T: Scalar>(problem: &Problem<T>, c: Condition) -> Result<&[Vec<T>], StabilityError> {
    match problem.fading() {
        FadingProcess::Markov(q) => Ok(q),
        FadingProcess::Iid(_) => Err(StabilityError::WrongCondition {
            condition: c,
            reason: "fading is not Markov",
        }),
    }
}

/// Scalar plant, Markov fading: `lambda^{2n} rho(Q^T D) < 1`.
pub fn check_markov_scalar<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    let c = Condition::MarkovScalar;
    require(problem.dim() == 1, c, "plant is not scalar")?;
    let q = markov_matrix(problem, c)?;
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    let lr = log_spectral_radius(&log_qt_d(q, &diag.log_d))?;
    let margin = margin_from(lr, problem.plant().log_abs_det(), 1, problem.block_len());
    Ok(StabilityVerdict::from_margin(margin, c))
}

/// Vector plant under TDMA scheduling, Markov fading.
pub fn check_markov_vector<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    let c = Condition::MarkovVector;
    let q = markov_matrix(problem, c)?;
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    check_tdma(problem, policy)?;
    let lr = log_spectral_radius(&log_qt_d(q, &diag.log_d))?;
    let margin = margin_from(lr, problem.plant().log_abs_det(), problem.dim(), problem.block_len());
    Ok(StabilityVerdict::from_margin(margin, c))
}

/// Picks the condition matching the plant dimension and fading kind.
pub fn check<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<StabilityVerdict<T>, StabilityError> {
    match (problem.dim() == 1, problem.fading().is_markov()) {
        (true, false) => check_iid_scalar(problem, policy),
        (false, false) => check_iid_vector(problem, policy),
        (true, true) => check_markov_scalar(problem, policy),
        (false, true) => check_markov_vector(problem, policy),
    }
}

/// Power iteration on a nonnegative matrix whose entries are all at most
/// one and whose spectral radius is at least one. Iterates are averaged with
/// their predecessor, which removes the oscillation of periodic structure.
/// Returns the Collatz-Wielandt midpoint once the bounds agree.
fn perron_root<T: Scalar>(b: &[Vec<T>]) -> Option<T> {
    let m = b.len();
    let tol = T::tol(SPECTRAL_TOL);
    let mut x = vec![T::one() / T::of_usize(m); m];
    for _ in 0..POWER_ITERATION_BUDGET {
        let y: Vec<T> = b
            .iter()
            .map(|row| row.iter().zip(&x).map(|(&a, &v)| a * v).sum())
            .collect();
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for (&yi, &xi) in y.iter().zip(&x) {
            let r = yi / xi;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !hi.is_finite() {
            return None;
        }
        if hi - lo <= tol * hi {
            return Some(T::c(0.5) * (lo + hi));
        }
        let ysum: T = y.iter().copied().sum();
        let xsum: T = x.iter().copied().sum();
        let r = ysum / xsum;
        if !(r > T::zero()) {
            return None;
        }
        let next: Vec<T> = y.iter().zip(&x).map(|(&yi, &xi)| T::c(0.5) * (yi / r + xi)).collect();
        let total: T = next.iter().copied().sum();
        x = next.into_iter().map(|v| v / total).collect();
    }
    None
}

/// Natural log of the spectral radius of the nonnegative matrix with
/// entries `exp(log_m[i][j])` (`-inf` for zero entries).
///
/// The matrix is first rescaled by a diagonal similarity so that its
/// largest cycle geometric mean is one and no entry exceeds one; the Perron
/// root of the rescaled matrix is then found by power iteration, with a
/// dense eigensolve as fallback.
pub fn log_spectral_radius<T: Scalar>(log_m: &[Vec<T>]) -> Result<T, StabilityError> {
    let mu = max_cycle_mean(log_m);
    if mu == T::neg_infinity() {
        // nilpotent
        return Ok(mu);
    }
    if !mu.is_finite() {
        return Err(StabilityError::Convergence);
    }
    let p = max_plus_potentials(log_m, mu);
    let b: Vec<Vec<T>> = log_m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &w)| {
                    if w == T::neg_infinity() {
                        T::zero()
                    } else {
                        (w + p[i] - p[j] - mu).exp()
                    }
                })
                .collect()
        })
        .collect();
    if let Some(r) = perron_root(&b) {
        return Ok(r.ln() + mu);
    }
    let bf: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|x| x.f64()).collect()).collect();
    let moduli = eigenvalue_moduli(&bf).ok_or(StabilityError::Convergence)?;
    let r = moduli.into_iter().fold(0.0f64, f64::max);
    if r > 0.0 && r.is_finite() {
        Ok(T::c(r.ln()) + mu)
    } else {
        Err(StabilityError::Convergence)
    }
}

/// Spectral radius of a nonnegative square matrix.
pub fn spectral_radius<T: Scalar>(m: &[Vec<T>]) -> Result<T, StabilityError> {
    let logs: Vec<Vec<T>> = m
        .iter()
        .map(|r| {
            r.iter()
                .map(|&x| if x > T::zero() { x.ln() } else { T::neg_infinity() })
                .collect()
        })
        .collect();
    Ok(log_spectral_radius(&logs)?.exp())
}

/// Outcome of the Lyapunov-type feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate<T> {
    pub feasible: bool,
    /// `log V_s` of a strictly feasible witness, when one exists.
    pub log_witness: Option<Vec<T>>,
}

impl<T: Scalar> LyapunovCertificate<T> {
    /// Witness rescaled so that its largest entry is one.
    pub fn witness(&self) -> Option<Vec<T>> {
        self.log_witness.as_ref().map(|lv| {
            let top = lv.iter().copied().fold(T::neg_infinity(), T::max);
            lv.iter().map(|&x| (x - top).exp()).collect()
        })
    }
}

/// Searches for `V_s > 0` with
/// `V_s - lambda^{2n} d_s sum_r q_rs V_r > 0` for every state.
///
/// Writing `M = lambda^{2n} D Q^T`, a positive `V` with `V > M V` exists iff
/// the linear system `(I - M) V = 1` has a positive solution. The system is
/// solved directly after a diagonal rescaling that keeps every entry of `M`
/// representable. The strict boundary matches [`check_markov_scalar`]: a
/// witness must clear the boundary tolerance of the stability margin.
pub fn lyapunov_feasible<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<LyapunovCertificate<T>, StabilityError> {
    let c = Condition::MarkovScalar;
    require(problem.dim() == 1, c, "plant is not scalar")?;
    let q = markov_matrix(problem, c)?;
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    let n = T::of_usize(problem.block_len());
    let two_n = T::c(2.0) * n;
    let lift = two_n * problem.plant().log_abs_det() + two_n * T::c(BOUNDARY_TOL);
    let m = q.len();
    // log entries of e^{2n tol} lambda^{2n} D Q^T: (s, r) -> log d_s + log q_rs
    let log_m: Vec<Vec<T>> = (0..m)
        .map(|s| {
            (0..m)
                .map(|r| {
                    if q[r][s] > T::zero() {
                        lift + diag.log_d[s] + q[r][s].ln()
                    } else {
                        T::neg_infinity()
                    }
                })
                .collect()
        })
        .collect();
    let infeasible = Ok(LyapunovCertificate {
        feasible: false,
        log_witness: None,
    });
    let mu = max_cycle_mean(&log_m);
    if mu >= T::zero() {
        // some cycle has gain >= 1, hence rho >= 1
        return infeasible;
    }
    let p = max_plus_potentials(&log_m, mu);
    // W = S V with S = diag(e^p): W > (S M S^-1) W
    let mut a = vec![vec![T::zero(); m]; m];
    for s in 0..m {
        for r in 0..m {
            let w = log_m[s][r];
            let b = if w == T::neg_infinity() {
                T::zero()
            } else {
                (w + p[s] - p[r]).exp()
            };
            a[s][r] = if s == r { T::one() - b } else { -b };
        }
    }
    let Some(wv) = lu_solve(a, vec![T::one(); m]) else {
        return infeasible;
    };
    if wv.iter().any(|&x| !(x > T::zero())) {
        return infeasible;
    }
    let log_v: Vec<T> = wv.iter().zip(&p).map(|(&x, &ps)| x.ln() - ps).collect();
    // substitute back: log V_s > log sum_r M_sr V_r
    let holds = (0..m).all(|s| {
        let rhs = log_sum_exp((0..m).map(|r| log_m[s][r] + log_v[r]));
        log_v[s] > rhs
    });
    if !holds {
        return infeasible;
    }
    Ok(LyapunovCertificate {
        feasible: true,
        log_witness: Some(log_v),
    })
}

/// `log E_pi[d]` (IID) or `log rho(Q^T D)` (Markov) for the given policy.
pub fn log_contraction<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
) -> Result<T, StabilityError> {
    let diag = contraction_diagonal(problem.channel(), policy, problem.plant())?;
    match problem.fading() {
        FadingProcess::Iid(p) => Ok(log_expected_contraction(p, &diag)),
        FadingProcess::Markov(q) => log_spectral_radius(&log_qt_d(q, &diag.log_d)),
    }
}

/// Supremal common eigenvalue magnitude stabilizable with `policy`.
///
/// Found by bisection on `log lambda` against the stability margin, which is
/// strictly decreasing in `lambda`. The returned boundary itself is not
/// stabilizable; every smaller magnitude is.
pub fn lambda_max<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Result<T, StabilityError> {
    let plant = problem.plant();
    if !plant.equal_magnitudes() {
        return Err(StabilityError::UnequalEigenvalues);
    }
    // validates the policy shape (and slot balance) once at the actual plant
    check(problem, policy)?;
    let lc = log_contraction(problem, policy)?;
    let l = problem.dim();
    let n = problem.block_len();
    let margin = |log_lambda: T| margin_from(lc, T::of_usize(l) * log_lambda, l, n);
    let tau = T::c(BOUNDARY_TOL);
    if margin(T::zero()) <= tau {
        return Ok(T::one());
    }
    let mut lo = T::zero();
    let mut hi = T::one();
    while margin(hi) > T::zero() {
        lo = hi;
        hi = hi * T::c(2.0);
        if !hi.is_finite() {
            return Ok(T::infinity());
        }
    }
    let width = T::tol(1e-13);
    while hi - lo > width * (T::one() + hi) {
        let mid = T::c(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if margin(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((T::c(0.5) * (lo + hi)).exp())
}

/// Capacity `0.5 log(1 + g^2 P / N)` of one channel use, in nats.
pub fn state_capacity<T: Scalar>(ch: &Channel<T>, power: T, gain: T) -> T {
    T::c(0.5) * (gain * gain * power / ch.noise_var()).ln_1p()
}

/// Per-state gap between the block capacity at the average slot power and
/// the capacity actually delivered by the TDMA slot powers, in nats per
/// block. Nonnegative by the AM-GM inequality; zero for equal slot powers.
pub fn tdma_capacity_gap<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Vec<T> {
    let ch = problem.channel();
    let l = problem.dim();
    let n = T::of_usize(ch.block_len());
    (0..ch.num_states())
        .map(|s| {
            let g = ch.gain(s);
            let avg = policy.state_powers()[s];
            let whole = n * state_capacity(ch, avg, g);
            let slots: T = (0..l)
                .map(|i| n / T::of_usize(l) * state_capacity(ch, policy.power(s, i), g))
                .sum();
            whole - slots
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FadingProcess;

    fn problem(lambda: f64, gains: Vec<f64>, n: usize, fading: FadingProcess<f64>) -> Problem<f64> {
        Problem::new(
            Plant::scalar(lambda, 0.0, 1.0).unwrap(),
            Channel::new(gains, 1.0, n).unwrap(),
            fading,
        )
        .unwrap()
    }

    fn example1(lambda: f64) -> (Problem<f64>, PowerPolicy<f64>) {
        (
            problem(lambda, vec![1.0, 0.5], 20, FadingProcess::iid(vec![0.5, 0.5]).unwrap()),
            PowerPolicy::per_state(vec![5.0, 4.7]).unwrap(),
        )
    }

    #[test]
    fn contraction_values() {
        let (p, pol) = example1(1.5);
        let d = contraction_diagonal(p.channel(), &pol, p.plant()).unwrap();
        assert!((d.log(0) - 20.0 * (1.0f64 / 6.0).ln()).abs() < 1e-12);
        assert!((d.log(0) + 35.835_189_384_561_1).abs() < 1e-9);
        let zero = PowerPolicy::per_state(vec![0.0, 0.0]).unwrap();
        let d = contraction_diagonal(p.channel(), &zero, p.plant()).unwrap();
        assert_eq!(d.log(0), 0.0);
        assert_eq!(d.value(1), 1.0);
    }

    #[test]
    fn vector_contraction_equal_slots() {
        let pl = Plant::diagonal(vec![2.0, 2.0]).unwrap();
        let ch = Channel::new(vec![0.7], 1.3, 4).unwrap();
        let pol = PowerPolicy::tdma(vec![vec![2.5, 2.5]]).unwrap();
        let d = contraction_diagonal(&ch, &pol, &pl).unwrap();
        let expected = 2.0 * (1.3f64 / (0.49 * 2.5 + 1.3)).ln();
        assert!((d.log(0) - expected).abs() < 1e-14);
    }

    #[test]
    fn example_one_boundary() {
        let (p, pol) = example1(1.49);
        assert!(check_iid_scalar(&p, &pol).unwrap().stabilizable);
        let (p, pol) = example1(1.51);
        let v = check_iid_scalar(&p, &pol).unwrap();
        assert!(!v.stabilizable);
        assert!(v.margin < 0.0);
    }

    #[test]
    fn single_state_reduction() {
        // lambda^2 N / (g^2 P + N) < 1 with lambda = 2: P > 3
        let f = FadingProcess::iid(vec![1.0]).unwrap();
        let p = problem(2.0, vec![1.0], 7, f);
        let ok = PowerPolicy::per_state(vec![3.01]).unwrap();
        let bad = PowerPolicy::per_state(vec![2.99]).unwrap();
        let edge = PowerPolicy::per_state(vec![3.0]).unwrap();
        assert!(check_iid_scalar(&p, &ok).unwrap().stabilizable);
        assert!(!check_iid_scalar(&p, &bad).unwrap().stabilizable);
        let v = check_iid_scalar(&p, &edge).unwrap();
        assert!(v.margin.abs() < 1e-15 && !v.stabilizable);
    }

    #[test]
    fn wrong_condition_is_rejected() {
        let (p, pol) = example1(1.4);
        assert!(matches!(
            check_markov_scalar(&p, &pol),
            Err(StabilityError::WrongCondition { .. })
        ));
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius::<f64>(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap() - 3.0).abs() < 1e-12);
        assert!((spectral_radius::<f64>(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectral_radius::<f64>(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap(), 0.0);
        // reducible with a zero row
        let r = spectral_radius::<f64>(&[vec![0.5, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((r - 0.5).abs() < 1e-10);
    }

    #[test]
    fn spectral_radius_rank_one() {
        let pi = [0.2, 0.3, 0.5];
        let d = [0.9, 0.1, 0.4];
        // Q^T D with Q rows = pi: entry (s, r) = pi_s d_r
        let m: Vec<Vec<f64>> = (0..3).map(|s| (0..3).map(|r| pi[s] * d[r]).collect()).collect();
        let expected: f64 = pi.iter().zip(&d).map(|(a, b)| a * b).sum();
        assert!((spectral_radius(&m).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn spectral_radius_extreme_scales() {
        // periodic chain with wildly different contraction factors:
        // rho = sqrt(d1 d2), far below what exp() can represent per entry
        let ld = [-5.0e4, -3.0e5];
        let ninf = f64::NEG_INFINITY;
        let m = vec![vec![ninf, ld[1]], vec![ld[0], ninf]];
        let lr = log_spectral_radius(&m).unwrap();
        assert!((lr - 0.5 * (ld[0] + ld[1])).abs() < 1e-9 * lr.abs());
    }

    #[test]
    fn lyapunov_scalar_state() {
        // lambda^{2n} d = 0.5 with a single state
        let f = FadingProcess::markov(vec![vec![1.0]]).unwrap();
        let p = problem(2.0, vec![1.0], 2, f);
        // 16 (1/(1+P))^2 = 0.5 -> P = sqrt(32) - 1
        let pol = PowerPolicy::per_state(vec![32f64.sqrt() - 1.0]).unwrap();
        let cert = lyapunov_feasible(&p, &pol).unwrap();
        assert!(cert.feasible);
        assert_eq!(cert.witness().unwrap(), vec![1.0]);
    }

    #[test]
    fn lambda_max_cases() {
        let (p, pol) = example1(1.2);
        let lm = lambda_max(&p, &pol).unwrap();
        assert!((lm - 1.5007).abs() < 1e-3, "{lm}");

        let f = FadingProcess::iid(vec![1.0]).unwrap();
        let p = problem(1.5, vec![1.0], 9, f);
        let pol = PowerPolicy::per_state(vec![3.0]).unwrap();
        assert!((lambda_max(&p, &pol).unwrap() - 2.0).abs() < 1e-10);

        let (p, _) = example1(1.2);
        let zero = PowerPolicy::per_state(vec![0.0, 0.0]).unwrap();
        assert_eq!(lambda_max(&p, &zero).unwrap(), 1.0);
    }

    #[test]
    fn capacities() {
        let ch = Channel::new(vec![1.0], 1.0, 2).unwrap();
        assert!((state_capacity(&ch, 5.0, 1.0) - 0.5 * 6f64.ln()).abs() < 1e-15);
        assert!((state_capacity(&ch, 5.0, 1.0) - 0.895_879_734_614_027_6).abs() < 1e-12);
        assert_eq!(state_capacity(&ch, 0.0, 1.0), 0.0);
        assert_eq!(state_capacity(&ch, 4.0, 0.0), 0.0);
    }

    #[test]
    fn tdma_violation() {
        let p = Problem::new(
            Plant::diagonal(vec![1.5, 2.0]).unwrap(),
            Channel::new(vec![1.0], 1.0, 4).unwrap(),
            FadingProcess::iid(vec![1.0]).unwrap(),
        )
        .unwrap();
        let pol = PowerPolicy::tdma(vec![vec![3.0, 3.0]]).unwrap();
        assert!(matches!(
            check_iid_vector(&p, &pol),
            Err(StabilityError::TdmaConstraintViolated { state: 0, .. })
        ));
        assert!(matches!(
            check_iid_vector(&p, &PowerPolicy::per_state(vec![3.0]).unwrap()),
            Err(StabilityError::MissingSlotPowers(2))
        ));
    }

    #[test]
    fn f32_verdicts_agree() {
        let p32 = Problem::new(
            Plant::scalar(1.49f32, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0f32, 0.5], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![0.5f32, 0.5]).unwrap(),
        )
        .unwrap();
        let pol = PowerPolicy::per_state(vec![5.0f32, 4.7]).unwrap();
        let v = check_iid_scalar(&p32, &pol).unwrap();
        let (p64, pol64) = example1(1.49);
        let w = check_iid_scalar(&p64, &pol64).unwrap();
        assert!(v.stabilizable);
        assert!((v.margin as f64 - w.margin).abs() < 1e-5);
    }
}
