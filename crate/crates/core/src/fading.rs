//! Channel-state process: stationary distribution, occupation-weighted
//! average power and seeded sample paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{lu_solve, transpose};
use crate::model::{FadingProcess, PowerPolicy};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FadingError {
    #[error("stationary distribution did not converge (residual {residual:e})")]
    Convergence { residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Residual below which `pi^T Q = pi^T` is accepted.
pub const STATIONARY_TOL: f64 = 1e-12;

const POWER_ITERATION_BUDGET: usize = 1_000_000;

/// Long-run occupation frequencies of the channel states.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution<T> {
    pi: Vec<T>,
}

impl<T: Scalar> StationaryDistribution<T> {
    pub fn probabilities(&self) -> &[T] {
        &self.pi
    }

    pub fn get(&self, s: usize) -> T {
        self.pi[s]
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Wraps an explicit probability vector (trusted; used by tests and sweeps).
    pub fn from_probabilities(pi: Vec<T>) -> Self {
        StationaryDistribution { pi }
    }
}

fn stationary_residual<T: Scalar>(q: &[Vec<T>], pi: &[T]) -> T {
    let m = pi.len();
    (0..m)
        .map(|s| {
            let flow: T = (0..m).map(|r| pi[r] * q[r][s]).sum();
            (flow - pi[s]).abs()
        })
        .fold(T::zero(), T::max)
}

/// Stationary distribution of the fading process. IID probabilities are
/// returned unchanged; for a Markov chain `(Q^T - I) pi = 0` is solved with
/// the normalisation appended, falling back to power iteration on the lazy
/// chain `(Q + I) / 2` when the direct solve is not accurate enough.
pub fn stationary_distribution<T: Scalar>(
    f: &FadingProcess<T>,
) -> Result<StationaryDistribution<T>, FadingError> {
    let q = match f {
        FadingProcess::Iid(p) => return Ok(StationaryDistribution { pi: p.clone() }),
        FadingProcess::Markov(q) => q,
    };
    let m = q.len();
    let tol = T::tol(STATIONARY_TOL);

    let mut a = transpose(q);
    for (s, row) in a.iter_mut().enumerate() {
        row[s] = row[s] - T::one();
    }
    // replace the last (redundant) balance equation by sum(pi) = 1
    a[m - 1] = vec![T::one(); m];
    let mut b = vec![T::zero(); m];
    b[m - 1] = T::one();
    if let Some(pi) = lu_solve(a, b) {
        let nonneg = pi.iter().all(|&p| p >= -tol);
        if nonneg && stationary_residual(q, &pi) <= tol {
            let pi: Vec<T> = pi.into_iter().map(|p| p.max(T::zero())).collect();
            let total: T = pi.iter().copied().sum();
            return Ok(StationaryDistribution {
                pi: pi.into_iter().map(|p| p / total).collect(),
            });
        }
    }

    let half = T::c(0.5);
    let mut pi = vec![T::one() / T::of_usize(m); m];
    let mut residual = T::infinity();
    for _ in 0..POWER_ITERATION_BUDGET {
        let next: Vec<T> = (0..m)
            .map(|s| {
                let flow: T = (0..m).map(|r| pi[r] * q[r][s]).sum();
                half * (flow + pi[s])
            })
            .collect();
        let total: T = next.iter().copied().sum();
        pi = next.into_iter().map(|p| p / total).collect();
        residual = stationary_residual(q, &pi);
        if residual <= tol {
            return Ok(StationaryDistribution { pi });
        }
    }
    Err(FadingError::Convergence {
        residual: residual.f64(),
    })
}

/// Long-run average transmit power `sum_s pi_s P_s`, or
/// `sum_s sum_i (pi_s / l) P_{s,i}` for a TDMA policy over `l` subsystems.
pub fn average_power<T: Scalar>(
    pi: &StationaryDistribution<T>,
    policy: &PowerPolicy<T>,
    l: usize,
) -> Result<T, FadingError> {
    if pi.len() != policy.num_states() {
        return Err(FadingError::DimensionMismatch(format!(
            "{} stationary probabilities, {} policy states",
            pi.len(),
            policy.num_states()
        )));
    }
    match (l, policy.slot_powers()) {
        (1, None) => Ok(pi
            .pi
            .iter()
            .zip(policy.state_powers())
            .map(|(&p, &w)| p * w)
            .sum()),
        (l, Some(slots)) => {
            if slots.iter().any(|row| row.len() != l) {
                return Err(FadingError::DimensionMismatch(format!(
                    "slot powers do not have {l} entries per state"
                )));
            }
            let lf = T::of_usize(l);
            Ok(slots
                .iter()
                .zip(&pi.pi)
                .map(|(row, &p)| row.iter().map(|&x| p / lf * x).sum::<T>())
                .sum())
        }
        (l, None) => Err(FadingError::DimensionMismatch(format!(
            "plant of dimension {l} needs per-slot powers"
        ))),
    }
}

/// Independent generator for `trial` under `master_seed`. Streams of
/// different trials never overlap and do not depend on execution order.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

fn draw<T: Scalar, R: Rng + ?Sized>(rng: &mut R, probs: &[T]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &p) in probs.iter().enumerate() {
        let p = p.f64();
        if p <= 0.0 {
            continue;
        }
        last = s;
        acc += p;
        if u < acc {
            return s;
        }
    }
    last
}

/// Channel-state sequence of `num_blocks` blocks drawn from `rng`. Markov
/// paths start from `start` when given, otherwise from the stationary
/// distribution `pi`.
pub fn sample_path_with<T: Scalar, R: Rng + ?Sized>(
    f: &FadingProcess<T>,
    pi: &StationaryDistribution<T>,
    num_blocks: usize,
    start: Option<usize>,
    rng: &mut R,
) -> Vec<usize> {
    let mut path = Vec::with_capacity(num_blocks);
    match f {
        FadingProcess::Iid(p) => {
            for _ in 0..num_blocks {
                path.push(draw(rng, p));
            }
        }
        FadingProcess::Markov(q) => {
            if num_blocks == 0 {
                return path;
            }
            let mut s = start.unwrap_or_else(|| draw(rng, &pi.pi));
            path.push(s);
            for _ in 1..num_blocks {
                s = draw(rng, &q[s]);
                path.push(s);
            }
        }
    }
    path
}

/// Seeded channel-state path; identical seeds give identical paths.
pub fn sample_path<T: Scalar>(
    f: &FadingProcess<T>,
    num_blocks: usize,
    seed: u64,
    start: Option<usize>,
) -> Result<Vec<usize>, FadingError> {
    let pi = stationary_distribution(f)?;
    let mut rng = trial_rng(seed, 0);
    Ok(sample_path_with(f, &pi, num_blocks, start, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn markov(q: Vec<Vec<f64>>) -> FadingProcess<f64> {
        FadingProcess::markov(q).unwrap()
    }

    #[test]
    fn iid_is_identity() {
        let f = FadingProcess::iid(vec![0.5, 0.5]).unwrap();
        assert_eq!(stationary_distribution(&f).unwrap().probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn two_state_chain() {
        // pi_1 * 0.1 = pi_2 * 0.2 and pi_1 + pi_2 = 1
        let f = markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let pi = stationary_distribution(&f).unwrap();
        assert!((pi.get(0) - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi.get(1) - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn identical_rows() {
        let r = vec![0.2, 0.3, 0.5];
        let f = markov(vec![r.clone(), r.clone(), r.clone()]);
        let pi = stationary_distribution(&f).unwrap();
        for (a, b) in pi.probabilities().iter().zip(&r) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn periodic_chain() {
        let f = markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let pi = stationary_distribution(&f).unwrap();
        assert!((pi.get(0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn average_power_cases() {
        let pol = PowerPolicy::<f64>::per_state(vec![5.0, 4.7]).unwrap();
        let pi: StationaryDistribution<f64> = StationaryDistribution::from_probabilities(vec![0.5, 0.5]);
        assert!((average_power(&pi, &pol, 1).unwrap() - 4.85).abs() < 1e-12);

        let pol = PowerPolicy::<f64>::per_state(vec![3.0, 99.0]).unwrap();
        let pi: StationaryDistribution<f64> = StationaryDistribution::from_probabilities(vec![1.0, 0.0]);
        assert_eq!(average_power(&pi, &pol, 1).unwrap(), 3.0);

        let pol = PowerPolicy::<f64>::per_state(vec![3.0, 6.0]).unwrap();
        let pi: StationaryDistribution<f64> = StationaryDistribution::from_probabilities(vec![2.0 / 3.0, 1.0 / 3.0]);
        assert!((average_power(&pi, &pol, 1).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn average_power_vector_and_mismatch() {
        let pol = PowerPolicy::<f64>::tdma(vec![vec![1.0, 3.0], vec![4.0, 8.0]]).unwrap();
        let pi: StationaryDistribution<f64> = StationaryDistribution::from_probabilities(vec![0.5, 0.5]);
        // 0.25*(1+3) + 0.25*(4+8)
        assert!((average_power(&pi, &pol, 2).unwrap() - 4.0).abs() < 1e-14);
        assert!(average_power(&pi, &pol, 3).is_err());
        let short = StationaryDistribution::from_probabilities(vec![1.0]);
        assert!(matches!(
            average_power(&short, &pol, 2),
            Err(FadingError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deterministic_paths() {
        let f = FadingProcess::iid(vec![1.0, 0.0]).unwrap();
        assert_eq!(sample_path(&f, 5, 7, None).unwrap(), vec![0; 5]);

        let f = markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(sample_path(&f, 4, 7, Some(0)).unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn same_seed_same_path() {
        let f = markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let a = sample_path(&f, 1000, 42, None).unwrap();
        let b = sample_path(&f, 1000, 42, None).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&f, 1000, 43, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn occupation_converges() {
        let f = markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let path = sample_path(&f, 1_000_000, 1, None).unwrap();
        let freq = path.iter().filter(|&&s| s == 0).count() as f64 / path.len() as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.005, "freq {freq}");
    }
}
