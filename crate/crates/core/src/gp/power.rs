//! Minimum average power with and without adaptation to the channel state.

use crate::fading::{average_power, stationary_distribution};
use crate::model::{PowerPolicy, Problem};
use crate::scalar::Scalar;
use crate::stability::check;

use super::build::{build_gp_iid_scalar, build_gp_markov_vector, PowerLayout};
use super::solver::{solve, SolverOptions, SolverStats};
use super::{GeometricProgram, GpError};

/// Default relative duality gap.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default log-domain tightening of strict inequalities.
pub const DEFAULT_EPSILON_MARGIN: f64 = 1e-9;

/// Relative inflation at which the recovered policy must be stabilizing.
const CERT_ABOVE: f64 = 1e-6;

/// Relative deflation at which it must not be.
const CERT_BELOW: f64 = 1e-3;

/// Optimal (or uniform) power allocation. `p_star` is an infimum: the
/// stabilizing set is open, so any strictly larger budget suffices.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSolution<T> {
    /// `Pbar[s][i] = g_s^2 P[s][i] + N`.
    pub p_bar: Vec<Vec<T>>,
    pub policy: PowerPolicy<T>,
    pub p_star: T,
    pub stats: SolverStats,
    /// Lyapunov weights of the Markov programs (first weight normalised to one).
    pub lyapunov: Option<Vec<T>>,
    /// Largest `log` value among the stabilizability constraints; close to
    /// zero when no power is wasted.
    pub active_gap: T,
    pub uniform: bool,
}

fn policy_from_p_bar<T: Scalar>(layout: &PowerLayout<T>, p_bar: &[Vec<T>]) -> Result<PowerPolicy<T>, GpError> {
    let n = layout.noise_var;
    let powers: Vec<Vec<T>> = p_bar
        .iter()
        .zip(&layout.gains)
        .map(|(row, &g)| {
            row.iter()
                .map(|&pb| {
                    if g == T::zero() {
                        T::zero()
                    } else {
                        ((pb - n) / (g * g)).max(T::zero())
                    }
                })
                .collect()
        })
        .collect();
    let policy = if layout.dim == 1 {
        PowerPolicy::per_state(powers.into_iter().map(|r| r[0]).collect())
    } else {
        PowerPolicy::tdma(powers)
    };
    policy.map_err(|e| GpError::Malformed(format!("recovered policy is invalid: {e}")))
}

fn p_star_of<T: Scalar>(layout: &PowerLayout<T>, policy: &PowerPolicy<T>) -> Result<T, GpError> {
    let pi = crate::fading::StationaryDistribution::from_probabilities(layout.pi.clone());
    Ok(average_power(&pi, policy, layout.dim)?)
}

/// Solves a power program built by this module and reads the policy off the
/// optimum.
pub fn solve_gp<T: Scalar>(gp: &GeometricProgram<T>, tol: T, epsilon_margin: T) -> Result<PowerSolution<T>, GpError> {
    let layout = gp
        .layout
        .as_ref()
        .ok_or_else(|| GpError::Malformed("program carries no power layout".into()))?;
    let opts = SolverOptions {
        tol,
        epsilon_margin,
        ..SolverOptions::default()
    };
    let sol = match solve(gp, &opts) {
        Ok(sol) => sol,
        Err(GpError::Convergence {
            iterations,
            gap,
            incumbent,
            ..
        }) => {
            let y: Vec<T> = incumbent.iter().map(|&x| T::c(x).ln()).collect();
            let p_star = policy_from_p_bar(layout, &layout.p_bar(&y))
                .and_then(|pol| p_star_of(layout, &pol))
                .ok()
                .map(|p| p.f64());
            return Err(GpError::Convergence {
                iterations,
                gap,
                incumbent,
                p_star,
            });
        }
        Err(e) => return Err(e),
    };
    let p_bar = layout.p_bar(&sol.log_x);
    let policy = policy_from_p_bar(layout, &p_bar)?;
    let p_star = p_star_of(layout, &policy)?;
    let lyapunov = if layout.lyapunov_vars.iter().any(Option::is_some) {
        Some(
            layout
                .lyapunov_vars
                .iter()
                .map(|v| v.map_or(T::one(), |k| sol.x[k]))
                .collect(),
        )
    } else {
        None
    };
    let active_gap = layout
        .stability_constraints
        .iter()
        .map(|&c| sol.constraint_logs[c])
        .fold(T::neg_infinity(), T::max);
    Ok(PowerSolution {
        p_bar,
        policy,
        p_star,
        stats: sol.stats,
        lyapunov,
        active_gap,
        uniform: false,
    })
}

/// Policy whose leading-slot power is scaled by `factor`, the remaining
/// slots following the slot balance. `None` if a slot would need negative
/// power.
fn rescaled<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>, factor: T) -> Option<PowerPolicy<T>> {
    if problem.dim() == 1 {
        return Some(policy.scaled(factor));
    }
    let ch = problem.channel();
    let slots = (0..ch.num_states())
        .map(|s| {
            if ch.gain(s) == T::zero() {
                return Some(vec![T::zero(); problem.dim()]);
            }
            let g2 = ch.gain(s) * ch.gain(s);
            let lead = g2 * policy.power(s, 0) * factor + ch.noise_var();
            balanced_slots(problem, s, lead)
        })
        .collect::<Option<Vec<_>>>()?;
    PowerPolicy::tdma(slots).ok()
}

/// Slot powers of state `s` when the leading slot has `Pbar = lead`.
fn balanced_slots<T: Scalar>(problem: &Problem<T>, s: usize, lead: T) -> Option<Vec<T>> {
    let ch = problem.channel();
    let g2 = ch.gain(s) * ch.gain(s);
    let eig = problem.plant().eigenvalues();
    let two_l = T::c(2.0) * T::of_usize(eig.len());
    let l0 = eig[0].ln();
    let slack = T::tol(1e-12) * ch.noise_var();
    eig.iter()
        .map(|&e| {
            let pb = lead * (two_l * (e.ln() - l0)).exp();
            let p = (pb - ch.noise_var()) / g2;
            if p < -slack {
                None
            } else {
                Some(p.max(T::zero()))
            }
        })
        .collect()
}

/// Splits a mean slot power for state `s` over the TDMA slots so that the
/// slot balance holds. `None` when the balance needs a negative slot power.
/// Zero-gain states receive the mean in every slot.
pub fn tdma_split<T: Scalar>(problem: &Problem<T>, s: usize, mean_power: T) -> Option<Vec<T>> {
    let ch = problem.channel();
    let l = problem.dim();
    if ch.gain(s) == T::zero() || l == 1 {
        return Some(vec![mean_power; l]);
    }
    let g2 = ch.gain(s) * ch.gain(s);
    let eig = problem.plant().eigenvalues();
    let two_l = T::c(2.0) * T::of_usize(l);
    let l0 = eig[0].ln();
    let ratio_sum: T = eig.iter().map(|&e| (two_l * (e.ln() - l0)).exp()).sum();
    // mean of Pbar over slots is g^2 P + N
    let lead = T::of_usize(l) * (g2 * mean_power + ch.noise_var()) / ratio_sum;
    balanced_slots(problem, s, lead)
}

fn certify<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Result<(), GpError> {
    let above = rescaled(problem, policy, T::one() + T::c(CERT_ABOVE))
        .ok_or_else(|| GpError::Certificate("inflated policy violates the slot balance".into()))?;
    let v = check(problem, &above)?;
    if !v.stabilizable {
        return Err(GpError::Certificate(format!(
            "policy inflated by {CERT_ABOVE:e} is not stabilizing (margin {:e})",
            v.margin.f64()
        )));
    }
    if let Some(below) = rescaled(problem, policy, T::one() - T::c(CERT_BELOW)) {
        if let Ok(v) = check(problem, &below) {
            if v.stabilizable {
                return Err(GpError::Certificate(format!(
                    "policy deflated by {CERT_BELOW:e} is still stabilizing (margin {:e})",
                    v.margin.f64()
                )));
            }
        }
    }
    Ok(())
}

/// Minimum average power under per-state adaptation, with default solver
/// settings.
pub fn min_power<T: Scalar>(problem: &Problem<T>) -> Result<PowerSolution<T>, GpError> {
    min_power_with(problem, T::c(DEFAULT_TOL), T::c(DEFAULT_EPSILON_MARGIN))
}

/// Minimum average power under per-state adaptation. The program is chosen
/// by plant dimension and fading kind; the recovered policy is certified to
/// stabilize just above the optimum and to fail just below it.
pub fn min_power_with<T: Scalar>(problem: &Problem<T>, tol: T, epsilon_margin: T) -> Result<PowerSolution<T>, GpError> {
    let gp = if problem.dim() == 1 && !problem.fading().is_markov() {
        build_gp_iid_scalar(problem)?
    } else {
        build_gp_markov_vector(problem)?
    };
    let sol = solve_gp(&gp, tol, epsilon_margin)?;
    certify(problem, &sol.policy)?;
    Ok(sol)
}

/// Policy spending the same mean power in every state.
fn uniform_policy<T: Scalar>(problem: &Problem<T>, power: T) -> Option<PowerPolicy<T>> {
    let m = problem.num_states();
    if problem.dim() == 1 {
        return PowerPolicy::per_state(vec![power; m]).ok();
    }
    let slots = (0..m)
        .map(|s| tdma_split(problem, s, power))
        .collect::<Option<Vec<_>>>()?;
    PowerPolicy::tdma(slots).ok()
}

fn stabilizes<T: Scalar>(problem: &Problem<T>, power: T) -> Result<bool, GpError> {
    match uniform_policy(problem, power) {
        Some(pol) => Ok(check(problem, &pol)?.stabilizable),
        None => Ok(false),
    }
}

/// Minimum power when the same power is used in every channel state, by
/// bisection on `log P` against the (monotone) stability verdict.
pub fn min_power_uniform<T: Scalar>(problem: &Problem<T>) -> Result<PowerSolution<T>, GpError> {
    let mut steps = 0;
    let mut hi = problem.channel().noise_var();
    while !stabilizes(problem, hi)? {
        hi = hi * T::c(2.0);
        steps += 1;
        if !hi.is_finite() || steps > 2_000 {
            return Err(GpError::Infeasible { bound: f64::INFINITY });
        }
    }
    let mut lo = T::zero();
    if hi > problem.channel().noise_var() {
        lo = hi * T::c(0.5);
    }
    let rel = T::tol(1e-13);
    while hi - lo > rel * hi {
        let mid = T::c(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        steps += 1;
        if stabilizes(problem, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let policy = uniform_policy(problem, hi).ok_or_else(|| GpError::Certificate("uniform split failed".into()))?;
    let pi = stationary_distribution(problem.fading())?;
    let p_star = average_power(&pi, &policy, problem.dim())?;
    let ch = problem.channel();
    let p_bar = (0..ch.num_states())
        .map(|s| {
            (0..problem.dim())
                .map(|i| ch.gain(s) * ch.gain(s) * policy.power(s, i) + ch.noise_var())
                .collect()
        })
        .collect();
    let margin = check(problem, &policy)?.margin;
    Ok(PowerSolution {
        p_bar,
        policy,
        p_star,
        stats: SolverStats {
            outer_iterations: steps,
            ..SolverStats::default()
        },
        lyapunov: None,
        active_gap: -margin,
        uniform: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, FadingProcess, Plant};

    fn example(lambda: f64, pi1: f64) -> Problem<f64> {
        Problem::new(
            Plant::scalar(lambda, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0, 0.5], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![pi1, 1.0 - pi1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_state_closed_form() {
        let p = Problem::new(
            Plant::<f64>::scalar(2.0, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0], 1.0, 7).unwrap(),
            FadingProcess::iid(vec![1.0]).unwrap(),
        )
        .unwrap();
        let sol = min_power(&p).unwrap();
        assert!((sol.p_star - 3.0).abs() < 1e-6, "{}", sol.p_star);
        let uni = min_power_uniform(&p).unwrap();
        assert!((uni.p_star - 3.0).abs() < 1e-9, "{}", uni.p_star);
    }

    #[test]
    fn endpoints() {
        let a = min_power(&example(1.5, 1.0)).unwrap();
        assert!((a.p_star - 1.25).abs() < 1e-6, "{}", a.p_star);
        assert_eq!(a.policy.state_powers()[1], 0.0);
        let b = min_power(&example(1.5, 0.0)).unwrap();
        assert!((b.p_star - 5.0).abs() < 1e-6, "{}", b.p_star);
    }

    #[test]
    fn interior_kkt_ratio() {
        let sol = min_power(&example(1.5, 0.5)).unwrap();
        let ratio = sol.p_bar[0][0] / sol.p_bar[1][0];
        assert!((ratio - 4f64.powf(1.0 / 21.0)).abs() < 1e-6, "{ratio}");
        assert!(sol.p_star < 4.85);
        assert!(sol.active_gap > -1e-6);
    }

    #[test]
    fn adapted_below_uniform() {
        let p = example(1.5, 0.5);
        let a = min_power(&p).unwrap();
        let u = min_power_uniform(&p).unwrap();
        assert!(a.p_star < u.p_star);
    }

    #[test]
    fn markov_matches_iid_for_identical_rows() {
        let iid = example(1.4, 0.3);
        let markov = iid
            .with_fading(FadingProcess::markov(vec![vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap())
            .unwrap();
        let a = min_power(&iid).unwrap();
        let b = min_power(&markov).unwrap();
        assert!((a.p_star - b.p_star).abs() < 1e-6 * a.p_star, "{} {}", a.p_star, b.p_star);
    }

    #[test]
    fn zero_gain_state_unstabilizable() {
        // the dead state alone already amplifies by lambda^{2n} pi_2 > 1
        let p = Problem::new(
            Plant::scalar(1.5, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0, 0.0], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert!(matches!(min_power(&p), Err(GpError::Infeasible { .. })));
        assert!(matches!(min_power_uniform(&p), Err(GpError::Infeasible { .. })));
    }

    #[test]
    fn vector_equal_eigenvalues() {
        let plant = Plant::<f64>::new(vec![1.2, 1.2], vec![1, 1], vec![0.0; 2], vec![1.0; 2]).unwrap();
        let p = Problem::new(
            plant,
            Channel::new(vec![1.0, 0.5], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let sol = min_power(&p).unwrap();
        let slots = sol.policy.slot_powers().unwrap();
        for row in slots {
            assert!((row[0] - row[1]).abs() < 1e-8 * (1.0 + row[0]));
        }
        // same as the scalar problem with the product eigenvalue over half the block
        let scalar = example(1.44, 0.5)
            .with_channel(Channel::new(vec![1.0, 0.5], 1.0, 10).unwrap())
            .unwrap();
        let s = min_power(&scalar).unwrap();
        assert!((sol.p_star - s.p_star).abs() < 1e-6 * s.p_star);
    }

    #[test]
    fn tdma_split_balances() {
        let plant = Plant::<f64>::new(vec![1.1, 1.6], vec![1, 1], vec![0.0; 2], vec![1.0; 2]).unwrap();
        let p = Problem::new(
            plant,
            Channel::new(vec![1.0], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![1.0]).unwrap(),
        )
        .unwrap();
        let slots = tdma_split(&p, 0, 10.0).unwrap();
        assert!(((slots[0] + slots[1]) / 2.0 - 10.0).abs() < 1e-12);
        let pol = PowerPolicy::tdma(vec![slots]).unwrap();
        assert!(crate::stability::tdma_spread(&p, &pol)[0] < 1e-12);
        assert!(tdma_split(&p, 0, 0.01).is_none());
    }
}
