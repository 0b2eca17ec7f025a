//! Geometric programs for the minimum average power.
//!
//! Power enters through `Pbar = g^2 P + N`, so a state's contraction factor
//! is the monomial `(N / Pbar)^n` and `P >= 0` becomes `N / Pbar <= 1`.
//! States that cannot use power (zero gain, or zero probability under IID
//! fading) are fixed at `Pbar = N` and contribute constants instead of
//! variables. Lyapunov weights are defined up to a common factor; the first
//! one is pinned to one by a monomial equality. A single-state chain needs
//! no weights at all.

use crate::fading::stationary_distribution;
use crate::model::{FadingProcess, Problem};
use crate::scalar::Scalar;
use crate::stability::{Condition, StabilityError};

use super::{GeometricProgram, GpError, Inequality, Monomial, Posynomial};

/// How the variables of a power program map back to transmit powers.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLayout<T> {
    pub noise_var: T,
    pub gains: Vec<T>,
    pub pi: Vec<T>,
    /// Plant dimension, i.e. TDMA slots per block.
    pub dim: usize,
    /// Variable holding `Pbar[s, i]`, or `None` when fixed at `N`.
    pub power_vars: Vec<Vec<Option<usize>>>,
    /// Variable holding the Lyapunov weight `V[s]`, when present.
    pub lyapunov_vars: Vec<Option<usize>>,
    /// Indices of the stabilizability inequalities.
    pub stability_constraints: Vec<usize>,
    /// `log(Pbar[s, i] / Pbar[s, 0])` imposed by the slot balance.
    pub slot_log_ratios: Vec<T>,
}

impl<T: Scalar> PowerLayout<T> {
    /// `Pbar[s][i]` at the point `log x = y`.
    pub fn p_bar(&self, y: &[T]) -> Vec<Vec<T>> {
        self.power_vars
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| v.map_or(self.noise_var, |k| y[k].exp()))
                    .collect()
            })
            .collect()
    }
}

/// `log(|lambda_i|^{2l} / |lambda_0|^{2l})` for each subsystem.
fn slot_log_ratios<T: Scalar>(problem: &Problem<T>) -> Vec<T> {
    let eig = problem.plant().eigenvalues();
    let two_l = T::c(2.0) * T::of_usize(eig.len());
    let l0 = eig[0].ln();
    eig.iter().map(|&e| two_l * (e.ln() - l0)).collect()
}

fn wrong(condition: Condition, reason: &'static str) -> GpError {
    GpError::Stability(StabilityError::WrongCondition { condition, reason })
}

/// Builds `min sum_s (pi_s / g_s^2) Pbar_s` subject to
/// `lambda^{2n} N^n sum_s pi_s Pbar_s^{-n} < 1` and `N Pbar_s^{-1} <= 1`.
pub fn build_gp_iid_scalar<T: Scalar>(problem: &Problem<T>) -> Result<GeometricProgram<T>, GpError> {
    let c = Condition::IidScalar;
    if problem.dim() != 1 {
        return Err(wrong(c, "plant is not scalar"));
    }
    let FadingProcess::Iid(pi) = problem.fading() else {
        return Err(wrong(c, "fading is not IID"));
    };
    let ch = problem.channel();
    let nf = T::of_usize(ch.block_len());
    let two_n = T::c(2.0) * nf;
    let log_lambda = problem.plant().log_abs_det();
    let log_noise = ch.noise_var().ln();

    let mut variables = Vec::new();
    let mut power_vars = Vec::new();
    for s in 0..ch.num_states() {
        if pi[s] > T::zero() && ch.gain(s) > T::zero() {
            power_vars.push(vec![Some(variables.len())]);
            variables.push(format!("Pbar[{s}]"));
        } else {
            power_vars.push(vec![None]);
        }
    }

    let mut objective = Vec::new();
    let mut stab = Vec::new();
    let mut bounds = Vec::new();
    for s in 0..ch.num_states() {
        if pi[s] == T::zero() {
            continue;
        }
        let lead = two_n * log_lambda + pi[s].ln();
        match power_vars[s][0] {
            Some(k) => {
                let g2 = ch.gain(s) * ch.gain(s);
                objective.push(Monomial::from_log(pi[s].ln() - g2.ln(), vec![(k, T::one())]));
                stab.push(Monomial::from_log(lead + nf * log_noise, vec![(k, -nf)]));
                bounds.push(Inequality {
                    lhs: Posynomial::new(vec![Monomial::from_log(log_noise, vec![(k, -T::one())])]),
                    strict: false,
                });
            }
            None => stab.push(Monomial::from_log(lead, vec![])),
        }
    }
    if variables.is_empty() {
        return Err(GpError::Infeasible { bound: f64::INFINITY });
    }
    let mut inequalities = vec![Inequality {
        lhs: Posynomial::new(stab),
        strict: true,
    }];
    inequalities.extend(bounds);

    let start = initial_power(problem, T::zero());
    let initial_log = vec![start; variables.len()];
    let layout = PowerLayout {
        noise_var: ch.noise_var(),
        gains: ch.gains().to_vec(),
        pi: pi.clone(),
        dim: 1,
        power_vars,
        lyapunov_vars: vec![None; ch.num_states()],
        stability_constraints: vec![0],
        slot_log_ratios: vec![T::zero()],
    };
    let gp = GeometricProgram {
        variables,
        objective: Posynomial::new(objective),
        inequalities,
        equalities: vec![],
        initial_log: Some(initial_log),
        layout: Some(layout),
    };
    Ok(restore_feasibility(gp))
}

/// `log Pbar` of the default starting point: `N max(2, lambda_0^2)`, raised
/// by `extra` (log units).
fn initial_power<T: Scalar>(problem: &Problem<T>, extra: T) -> T {
    let lam = problem.plant().eigenvalues()[0];
    problem.channel().noise_var().ln() + (lam * lam).max(T::c(2.0)).ln() + extra
}

/// Doubles every power variable until the starting point is strictly
/// feasible, giving up after a bounded number of tries (the solver then
/// runs its own feasibility phase).
fn restore_feasibility<T: Scalar>(mut gp: GeometricProgram<T>) -> GeometricProgram<T> {
    let Some(layout) = gp.layout.clone() else {
        return gp;
    };
    let Some(mut y) = gp.initial_log.clone() else {
        return gp;
    };
    let power: Vec<usize> = layout.power_vars.iter().flatten().flatten().copied().collect();
    let ln2 = T::c(2.0).ln();
    for _ in 0..200 {
        let ok = gp.inequalities.iter().all(|c| c.lhs.log_eval(&y) < -T::c(1e-6));
        if ok {
            break;
        }
        for &k in &power {
            y[k] = y[k] + ln2;
        }
    }
    gp.initial_log = Some(y);
    gp
}

/// Markov scalar program:
/// `lambda^{2n} N^n Pbar_s^{-n} V_s^{-1} sum_r q_rs V_r < 1`, `N Pbar_s^{-1} <= 1`.
/// Identical to [`build_gp_markov_vector`] on a scalar plant.
pub fn build_gp_markov_scalar<T: Scalar>(problem: &Problem<T>) -> Result<GeometricProgram<T>, GpError> {
    let c = Condition::MarkovScalar;
    if problem.dim() != 1 {
        return Err(wrong(c, "plant is not scalar"));
    }
    if !problem.fading().is_markov() {
        return Err(wrong(c, "fading is not Markov"));
    }
    build_gp_markov_vector(problem)
}

/// TDMA program over slot powers:
/// `|lambda_0|^{2n} N^{n/l} Pbar_{s,0}^{-n/l} V_s^{-1} sum_r q_rs V_r < 1`,
/// `(|lambda_0|^{2l} / |lambda_i|^{2l}) Pbar_{s,i} Pbar_{s,0}^{-1} = 1`,
/// `N Pbar_{s,i}^{-1} <= 1`.
///
/// IID fading is handled as the rank-one chain `q_rs = pi_s` over the states
/// of positive probability.
pub fn build_gp_markov_vector<T: Scalar>(problem: &Problem<T>) -> Result<GeometricProgram<T>, GpError> {
    let ch = problem.channel();
    let m = ch.num_states();
    let l = problem.dim();
    let pi = stationary_distribution(problem.fading())?.probabilities().to_vec();
    let q = problem.fading().transition_matrix();
    // IID states of zero probability are never visited
    let live: Vec<bool> = (0..m)
        .map(|s| problem.fading().is_markov() || pi[s] > T::zero())
        .collect();
    let live_count = live.iter().filter(|&&b| b).count();

    let nf = T::of_usize(ch.block_len());
    let lf = T::of_usize(l);
    let n_over_l = nf / lf;
    let log_noise = ch.noise_var().ln();
    let eig = problem.plant().eigenvalues();
    let ratios = slot_log_ratios(problem);

    let mut variables = Vec::new();
    let mut power_vars = vec![vec![None; l]; m];
    for s in 0..m {
        if live[s] && ch.gain(s) > T::zero() {
            for (i, slot) in power_vars[s].iter_mut().enumerate() {
                *slot = Some(variables.len());
                variables.push(if l == 1 {
                    format!("Pbar[{s}]")
                } else {
                    format!("Pbar[{s},{i}]")
                });
            }
        }
    }
    if variables.is_empty() {
        return Err(GpError::Infeasible { bound: f64::INFINITY });
    }
    let mut lyapunov_vars = vec![None; m];
    if live_count > 1 {
        for s in 0..m {
            if live[s] {
                lyapunov_vars[s] = Some(variables.len());
                variables.push(format!("V[{s}]"));
            }
        }
    }

    let mut objective = Vec::new();
    let mut inequalities = Vec::new();
    let mut equalities = Vec::new();
    let mut stability_constraints = Vec::new();
    let all_eig: T = eig.iter().map(|&e| e.ln()).sum::<T>() * T::c(2.0) * n_over_l;
    for s in 0..m {
        if !live[s] {
            continue;
        }
        let (lead, power_exp) = match power_vars[s][0] {
            Some(k) => (
                T::c(2.0) * nf * eig[0].ln() + n_over_l * log_noise,
                vec![(k, -n_over_l)],
            ),
            None => (all_eig, vec![]),
        };
        let mut terms = Vec::new();
        for r in 0..m {
            if !live[r] || !(q[r][s] > T::zero()) {
                continue;
            }
            let mut exps = power_exp.clone();
            if r != s {
                if let (Some(vr), Some(vs)) = (lyapunov_vars[r], lyapunov_vars[s]) {
                    exps.push((vr, T::one()));
                    exps.push((vs, -T::one()));
                }
            }
            terms.push(Monomial::from_log(lead + q[r][s].ln(), exps));
        }
        stability_constraints.push(inequalities.len());
        inequalities.push(Inequality {
            lhs: Posynomial::new(terms),
            strict: true,
        });
    }
    for s in 0..m {
        let Some(k0) = power_vars[s][0] else {
            continue;
        };
        let g2 = ch.gain(s) * ch.gain(s);
        for i in 0..l {
            let k = power_vars[s][i].expect("live state has every slot");
            objective.push(Monomial::from_log(pi[s].ln() - lf.ln() - g2.ln(), vec![(k, T::one())]));
            inequalities.push(Inequality {
                lhs: Posynomial::new(vec![Monomial::from_log(log_noise, vec![(k, -T::one())])]),
                strict: false,
            });
            if i > 0 {
                equalities.push(Monomial::from_log(-ratios[i], vec![(k, T::one()), (k0, -T::one())]));
            }
        }
    }
    if let Some(v0) = lyapunov_vars.iter().flatten().next() {
        equalities.push(Monomial::from_log(T::zero(), vec![(*v0, T::one())]));
    }

    // start with every slot at or above N and the slot balance satisfied
    let min_ratio = ratios.iter().copied().fold(T::zero(), T::min);
    let base = initial_power(problem, -min_ratio);
    let mut initial_log = vec![T::zero(); variables.len()];
    for row in &power_vars {
        for (i, v) in row.iter().enumerate() {
            if let Some(k) = v {
                initial_log[*k] = base + ratios[i];
            }
        }
    }

    let layout = PowerLayout {
        noise_var: ch.noise_var(),
        gains: ch.gains().to_vec(),
        pi,
        dim: l,
        power_vars,
        lyapunov_vars,
        stability_constraints,
        slot_log_ratios: ratios,
    };
    let gp = GeometricProgram {
        variables,
        objective: Posynomial::new(objective),
        inequalities,
        equalities,
        initial_log: Some(initial_log),
        layout: Some(layout),
    };
    Ok(restore_feasibility(gp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, Plant};

    fn scalar_problem(lambda: f64, gains: Vec<f64>, fading: FadingProcess<f64>) -> Problem<f64> {
        Problem::new(
            Plant::scalar(lambda, 0.0, 1.0).unwrap(),
            Channel::new(gains, 1.0, 20).unwrap(),
            fading,
        )
        .unwrap()
    }

    #[test]
    fn single_state_has_no_lyapunov_weight() {
        let p = scalar_problem(2.0, vec![1.0], FadingProcess::markov(vec![vec![1.0]]).unwrap());
        let gp = build_gp_markov_scalar(&p).unwrap();
        assert_eq!(gp.variables, vec!["Pbar[0]"]);
        let stab = &gp.inequalities[0].lhs.terms;
        assert_eq!(stab.len(), 1);
        // lambda^{2n} N^n Pbar^{-n}
        assert!((stab[0].log_coeff - 40.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(stab[0].exponents, vec![(0, -20.0)]);
    }

    #[test]
    fn two_state_markov_terms() {
        let q = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let p = scalar_problem(1.5, vec![1.0, 0.5], FadingProcess::markov(q).unwrap());
        let gp = build_gp_markov_scalar(&p).unwrap();
        assert_eq!(gp.variables.len(), 4);
        assert_eq!(gp.inequalities.len(), 4);
        for c in &gp.inequalities[..2] {
            assert_eq!(c.lhs.terms.len(), 2);
            assert!(c.strict);
        }
        assert!(gp.validate().is_ok());
        assert_eq!(gp.equalities.len(), 1);
    }

    #[test]
    fn vector_at_dim_one_equals_scalar() {
        let q = vec![vec![0.6, 0.4], vec![0.3, 0.7]];
        let p = scalar_problem(1.3, vec![1.0, 0.4], FadingProcess::markov(q).unwrap());
        assert_eq!(build_gp_markov_scalar(&p).unwrap(), build_gp_markov_vector(&p).unwrap());
    }

    #[test]
    fn iid_zero_probability_state_is_fixed() {
        let p = scalar_problem(1.5, vec![1.0, 0.5], FadingProcess::iid(vec![1.0, 0.0]).unwrap());
        let gp = build_gp_iid_scalar(&p).unwrap();
        assert_eq!(gp.variables, vec!["Pbar[0]"]);
        assert_eq!(gp.layout.unwrap().power_vars[1], vec![None]);
    }

    #[test]
    fn vector_equalities_are_monomials() {
        let plant = Plant::new(vec![1.2, 1.5], vec![1, 1], vec![0.0; 2], vec![1.0; 2]).unwrap();
        let p = Problem::new(
            plant,
            Channel::new(vec![1.0, 0.5], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let gp = build_gp_markov_vector(&p).unwrap();
        // 4 slot powers + 2 weights
        assert_eq!(gp.num_vars(), 6);
        // two slot balances + weight normalisation
        assert_eq!(gp.equalities.len(), 3);
        let y: Vec<f64> = gp.initial_log.clone().unwrap();
        for e in &gp.equalities {
            assert!(e.log_eval(&y).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_positive() {
        let q = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
        let p = scalar_problem(1.1, vec![1.0, 0.0, 2.0], FadingProcess::markov(q).unwrap());
        let gp = build_gp_markov_scalar(&p).unwrap();
        assert!(gp.validate().is_ok());
        for c in &gp.inequalities {
            for t in &c.lhs.terms {
                assert!(t.coeff() > 0.0);
            }
        }
    }
}
