//! Monte Carlo closed loop with the linear feedback coding scheme.
//!
//! Per TDMA slot the encoder sends the decoder's current error on one state
//! component, normalised to the scheduled power; the decoder refines its
//! estimate of the initial state by a linear MMSE update whose coefficient
//! uses the error variance tracked along the realised channel-state path.
//! The first informative use of each component sends the centred initial
//! state and the decoder forms the unbiased estimate. The controller
//! applies `U(k) = K Zbar(k)`, where `Zbar(k) - Z(k) = A^k eps(k)`.
//!
//! The simulator tracks the decoder error `eps = Zhat_0 - Z(0)` rather
//! than `Zhat_0`, as a normalised value times `exp(log_v / 2)`: after a few
//! blocks the error sits far below the resolution of a double-precision
//! estimate near `Z(0)`, and later its variance leaves the range of `f64`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::fading::{average_power, sample_path_with, stationary_distribution, trial_rng, FadingError};
use crate::linalg::{eigenvalue_moduli, lu_solve};
use crate::model::{FadingProcess, Plant, PowerPolicy, Problem};
use crate::scalar::{log_sum_exp, Scalar};

/// A trial whose state norm exceeds this is stopped and counted as overflowed.
pub const OVERFLOW_GUARD: f64 = 1e150;

/// Fewest trials for which [`empirical_vs_analytic`] reports bands.
pub const MIN_TRIALS: usize = 1000;

/// Simultaneous coverage of each family of confidence bands.
pub const CONFIDENCE: f64 = 0.99;

/// Trials per work unit; fixed so that aggregation order never depends on
/// the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("closed-loop matrix A + BK is not Schur stable (spectral radius {radius})")]
    NonSchurGain { radius: f64 },
    #[error("plant is not controllable from a single input (an eigenvalue spans several Jordan blocks)")]
    Uncontrollable,
    #[error("controller gain has {got} entries, plant dimension is {expected}")]
    GainLength { expected: usize, got: usize },
    #[error("{got} trials are too few for confidence bands (need at least {need})")]
    InsufficientTrials { got: usize, need: usize },
    #[error("policy does not match the problem: {0}")]
    Policy(String),
    #[error("start state {0} does not exist")]
    StartState(usize),
    #[error("path has {got} blocks, expected {expected}")]
    PathLength { expected: usize, got: usize },
    #[error(transparent)]
    Fading(#[from] FadingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trials: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Row vector `K`; the deadbeat gain when `None`.
    pub gain: Option<Vec<f64>>,
    /// Forced initial channel state for Markov fading.
    pub start_state: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trials: 10_000,
            blocks: 20,
            seed: 0,
            gain: None,
            start_state: None,
        }
    }
}

/// Real Jordan form `A` with the stored eigenvalue magnitudes and the input
/// vector `B` with a one at the last row of every Jordan block.
pub fn jordan_form(plant: &Plant<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let l = plant.dim();
    let mut a = vec![vec![0.0; l]; l];
    let mut b = vec![0.0; l];
    let mut start = 0;
    for &size in plant.jordan_blocks() {
        for r in start..start + size {
            a[r][r] = plant.eigenvalues()[r];
            if r + 1 < start + size {
                a[r][r + 1] = 1.0;
            }
        }
        b[start + size - 1] = 1.0;
        start += size;
    }
    (a, b)
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// Gain placing every eigenvalue of `A + BK` at zero (Ackermann's formula
/// `K = -e_l^T C^{-1} A^l` with `C` the controllability matrix).
pub fn deadbeat_gain(plant: &Plant<f64>) -> Result<Vec<f64>, SimError> {
    let (a, b) = jordan_form(plant);
    let l = plant.dim();
    // columns B, AB, ..., A^{l-1}B
    let mut cols = vec![b.clone()];
    for _ in 1..l {
        let prev = cols.last().expect("nonempty");
        cols.push((0..l).map(|i| (0..l).map(|k| a[i][k] * prev[k]).sum()).collect());
    }
    // w^T C = e_l^T  <=>  C^T w = e_l; row i of C^T is column i of C
    let mut e = vec![0.0; l];
    e[l - 1] = 1.0;
    let w = lu_solve(cols, e).ok_or(SimError::Uncontrollable)?;
    let mut al = a.clone();
    for _ in 1..l {
        al = mat_mul(&al, &a);
    }
    Ok((0..l).map(|j| -(0..l).map(|i| w[i] * al[i][j]).sum::<f64>()).collect())
}

/// Spectral radius of `A + BK`.
pub fn closed_loop_radius(plant: &Plant<f64>, gain: &[f64]) -> f64 {
    let (a, b) = jordan_form(plant);
    let l = plant.dim();
    let m: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..l).map(|j| a[i][j] + b[i] * gain[j]).collect())
        .collect();
    eigenvalue_moduli(&m)
        .map(|v| v.into_iter().fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY)
}

/// Per-slot quantities of one state component.
struct Slot<T> {
    /// Channel uses per block devoted to the component.
    uses: usize,
    /// `log(N / (g^2 P + N))` per use, by state.
    log_step: Vec<T>,
    /// `g^2 P / N` by state.
    snr: Vec<T>,
    log_var0: T,
}

fn slot<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>, comp: usize) -> Slot<T> {
    let ch = problem.channel();
    let snr: Vec<T> = (0..ch.num_states())
        .map(|s| ch.snr(s, policy.power(s, comp)))
        .collect();
    Slot {
        uses: ch.block_len() / problem.dim(),
        log_step: snr.iter().map(|&x| -x.ln_1p()).collect(),
        snr,
        log_var0: problem.plant().init_var()[comp].ln(),
    }
}

impl<T: Scalar> Slot<T> {
    /// Log error variance after a block in state `s` that carries the first
    /// informative transmission.
    fn first_block(&self, s: usize) -> T {
        self.log_var0 - self.snr[s].ln() + T::of_usize(self.uses - 1) * self.log_step[s]
    }

    fn informative(&self, s: usize) -> bool {
        self.snr[s] > T::zero()
    }
}

fn check_policy<T: Scalar>(problem: &Problem<T>, policy: &PowerPolicy<T>) -> Result<(), SimError> {
    if policy.num_states() != problem.num_states() {
        return Err(SimError::Policy(format!(
            "{} powers for {} channel states",
            policy.num_states(),
            problem.num_states()
        )));
    }
    let l = problem.dim();
    if l > 1 && policy.slot_powers().is_none_or(|s| s.iter().any(|r| r.len() != l)) {
        return Err(SimError::Policy(format!("vector plant needs {l} slot powers per state")));
    }
    Ok(())
}

/// Log error variance of each component at the end of every block of
/// `path`, conditional on the path.
fn log_alpha_components_conditional<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
    path: &[usize],
) -> Vec<Vec<T>> {
    (0..problem.dim())
        .map(|c| {
            let sl = slot(problem, policy, c);
            let mut informed = false;
            let mut la = sl.log_var0;
            path.iter()
                .map(|&s| {
                    if sl.informative(s) {
                        la = if informed {
                            la + T::of_usize(sl.uses) * sl.log_step[s]
                        } else {
                            sl.first_block(s)
                        };
                        informed = true;
                    }
                    la
                })
                .collect()
        })
        .collect()
}

/// `log alpha(j)` along a given channel-state path: the error variance
/// (summed over state components) at the end of each block.
pub fn log_alpha_conditional<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
    path: &[usize],
) -> Result<Vec<T>, SimError> {
    check_policy(problem, policy)?;
    let comps = log_alpha_components_conditional(problem, policy, path);
    Ok((0..path.len())
        .map(|j| log_sum_exp(comps.iter().map(|c| c[j]).collect::<Vec<_>>()))
        .collect())
}

/// `log alpha(j)` averaged over channel-state paths, for `num_blocks`
/// blocks. Markov paths start from `start` or the stationary distribution.
///
/// The recursion carries, per state, the error variance mass of paths that
/// have already delivered information and of those that have not.
pub fn log_alpha_marginal<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
    num_blocks: usize,
    start: Option<usize>,
) -> Result<Vec<T>, SimError> {
    check_policy(problem, policy)?;
    let m = problem.num_states();
    let pi = stationary_distribution(problem.fading())?;
    let q = problem.fading().transition_matrix();
    let ninf = T::neg_infinity();
    let p0: Vec<T> = match (problem.fading(), start) {
        (FadingProcess::Markov(_), Some(s)) => {
            if s >= m {
                return Err(SimError::StartState(s));
            }
            (0..m).map(|r| if r == s { T::one() } else { T::zero() }).collect()
        }
        _ => pi.probabilities().to_vec(),
    };
    let lg = |x: T| if x > T::zero() { x.ln() } else { ninf };
    let mut per_comp: Vec<Vec<T>> = Vec::new();
    for c in 0..problem.dim() {
        let sl = slot(problem, policy, c);
        let mut la = vec![ninf; m];
        let mut lu = vec![ninf; m];
        let mut out = Vec::with_capacity(num_blocks);
        for j in 0..num_blocks {
            let (ma, mu): (Vec<T>, Vec<T>) = if j == 0 {
                (vec![ninf; m], p0.iter().map(|&p| lg(p) + sl.log_var0).collect())
            } else {
                (0..m)
                    .map(|s| {
                        let a = log_sum_exp((0..m).map(|r| la[r] + lg(q[r][s])).collect::<Vec<_>>());
                        let u = log_sum_exp((0..m).map(|r| lu[r] + lg(q[r][s])).collect::<Vec<_>>());
                        (a, u)
                    })
                    .unzip()
            };
            for s in 0..m {
                if sl.informative(s) {
                    let carried = ma[s] + T::of_usize(sl.uses) * sl.log_step[s];
                    // mu carries var0; the first block replaces it
                    let fresh = mu[s] - sl.log_var0 + sl.first_block(s);
                    la[s] = log_sum_exp([carried, fresh]);
                    lu[s] = ninf;
                } else {
                    la[s] = ma[s];
                    lu[s] = mu[s];
                }
            }
            out.push(log_sum_exp(la.iter().chain(lu.iter()).copied().collect::<Vec<_>>()));
        }
        per_comp.push(out);
    }
    Ok((0..num_blocks)
        .map(|j| log_sum_exp(per_comp.iter().map(|c| c[j]).collect::<Vec<_>>()))
        .collect())
}

/// Error variance `alpha(j)` of the coding scheme: along `path` when given,
/// otherwise averaged over paths for `num_blocks` blocks.
pub fn alpha_recursion<T: Scalar>(
    problem: &Problem<T>,
    policy: &PowerPolicy<T>,
    path: Option<&[usize]>,
    num_blocks: usize,
) -> Result<Vec<T>, SimError> {
    let logs = match path {
        Some(p) => log_alpha_conditional(problem, policy, p)?,
        None => log_alpha_marginal(problem, policy, num_blocks, None)?,
    };
    Ok(logs.into_iter().map(|x| x.exp()).collect())
}

/// Sums over trials; combined in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `|Z(k)|^2` per step.
    pub state_sq: Vec<f64>,
    /// Error of the active component normalised by its tracked standard
    /// deviation, after each step's update, and its square.
    pub eps_norm: Vec<f64>,
    pub eps_norm_sq: Vec<f64>,
    /// `X(k)^2 / P` over steps with positive scheduled power.
    pub power_ratio: Vec<f64>,
    pub power_ratio_sq: Vec<f64>,
    pub power_count: Vec<usize>,
    /// `X(k)^2`.
    pub power: Vec<f64>,
    /// Per block: `|eps|^2 / alpha_marginal(j)`.
    pub alpha_ratio: Vec<f64>,
    /// Per block: `sum_i eps_i^2 / v_i / l` (mean one given the path) and its square.
    pub chi: Vec<f64>,
    pub chi_sq: Vec<f64>,
    /// Per block: `|Z((j+1)n)|^2`.
    pub block_state_sq: Vec<f64>,
    pub initial_state_sq: f64,
    pub final_state_sq: f64,
    pub trials: usize,
    /// Trials whose final state norm exceeds their initial one.
    pub grown: usize,
}

impl Moments {
    fn zeros(steps: usize, blocks: usize) -> Self {
        Moments {
            state_sq: vec![0.0; steps],
            eps_norm: vec![0.0; steps],
            eps_norm_sq: vec![0.0; steps],
            power_ratio: vec![0.0; steps],
            power_ratio_sq: vec![0.0; steps],
            power_count: vec![0; steps],
            power: vec![0.0; steps],
            alpha_ratio: vec![0.0; blocks],
            chi: vec![0.0; blocks],
            chi_sq: vec![0.0; blocks],
            block_state_sq: vec![0.0; blocks],
            initial_state_sq: 0.0,
            final_state_sq: 0.0,
            trials: 0,
            grown: 0,
        }
    }

    fn add(&mut self, o: &Moments) {
        fn acc(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        acc(&mut self.state_sq, &o.state_sq);
        acc(&mut self.eps_norm, &o.eps_norm);
        acc(&mut self.eps_norm_sq, &o.eps_norm_sq);
        acc(&mut self.power_ratio, &o.power_ratio);
        acc(&mut self.power_ratio_sq, &o.power_ratio_sq);
        self.power_count
            .iter_mut()
            .zip(&o.power_count)
            .for_each(|(x, y)| *x += y);
        acc(&mut self.power, &o.power);
        acc(&mut self.alpha_ratio, &o.alpha_ratio);
        acc(&mut self.chi, &o.chi);
        acc(&mut self.chi_sq, &o.chi_sq);
        acc(&mut self.block_state_sq, &o.block_state_sq);
        self.initial_state_sq += o.initial_state_sq;
        self.final_state_sq += o.final_state_sq;
        self.trials += o.trials;
        self.grown += o.grown;
    }
}

/// Result of a Monte Carlo run. Per-block vectors have one entry per block;
/// the mean squares refer to the state right after the block.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T> {
    pub num_trials: usize,
    pub num_blocks: usize,
    pub block_len: usize,
    pub dim: usize,
    pub seed: u64,
    /// Channel-state path of trial 0.
    pub path: Vec<usize>,
    pub log_alpha_analytic: Vec<T>,
    pub alpha_analytic: Vec<T>,
    pub alpha_empirical: Vec<T>,
    pub mean_square_state: Vec<T>,
    /// `E|Z(k)|^2` per step, over completed trials.
    pub mean_square_step: Vec<T>,
    pub initial_mean_square: T,
    /// Mean `X^2` per block.
    pub realized_power: Vec<T>,
    /// Long-run average power of the policy.
    pub scheduled_power: T,
    /// Trials stopped by the overflow guard.
    pub overflowed: usize,
    /// Trials that overflowed or ended with a larger state norm than they
    /// started with.
    pub diverged: usize,
    pub moments: Moments,
}

impl<T: Scalar> SimTrace<T> {
    pub fn divergence_fraction(&self) -> f64 {
        self.diverged as f64 / self.num_trials.max(1) as f64
    }

    /// CSV with columns `block_index,state,alpha_analytic,alpha_empirical,
    /// mean_square_state,realized_power`; `header` lines are written first,
    /// each prefixed with `# `.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            out.push_str("# ");
            out.push_str(h);
            out.push('\n');
        }
        out.push_str("block_index,state,alpha_analytic,alpha_empirical,mean_square_state,realized_power\n");
        for j in 0..self.num_blocks {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                j,
                self.path[j],
                self.alpha_analytic[j].f64(),
                self.alpha_empirical[j].f64(),
                self.mean_square_state[j].f64(),
                self.realized_power[j].f64()
            ));
        }
        out
    }
}

struct Loop<'a> {
    problem: &'a Problem<f64>,
    policy: &'a PowerPolicy<f64>,
    pi: crate::fading::StationaryDistribution<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    k: Vec<f64>,
    /// `A / rho` and `log rho`, so that `A^k = rho^k (A / rho)^k`.
    a_scaled: Vec<Vec<f64>>,
    log_rho: f64,
    log_alpha: Vec<f64>,
    blocks: usize,
    seed: u64,
    start: Option<usize>,
}

enum Outcome {
    Done(Moments),
    Overflow,
}

impl Loop<'_> {
    fn trial(&self, t: usize, path_out: Option<&mut Vec<usize>>) -> Outcome {
        let problem = self.problem;
        let ch = problem.channel();
        let plant = problem.plant();
        let l = plant.dim();
        let n = ch.block_len();
        let uses = n / l;
        let steps = n * self.blocks;
        let noise_sd = ch.noise_var().sqrt();
        let mut rng = trial_rng(self.seed, t as u64);
        let mut mo = Moments::zeros(steps, self.blocks);
        mo.trials = 1;

        let z0: Vec<f64> = (0..l)
            .map(|i| plant.init_mean()[i] + plant.init_var()[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let path = sample_path_with(problem.fading(), &self.pi, self.blocks, self.start, &mut rng);
        if let Some(p) = path_out {
            p.clone_from(&path);
        }
        let mut z = z0.clone();
        // decoder error per component as `unit * exp(log_v / 2)`; the
        // normalised part stays of order one while both factors would
        // under- or overflow on long horizons
        let mut log_v: Vec<f64> = plant.init_var().iter().map(|v| v.ln()).collect();
        let mut unit: Vec<f64> = (0..l)
            .map(|i| (plant.init_mean()[i] - z0[i]) * (-0.5 * log_v[i]).exp())
            .collect();
        let mut informed = vec![false; l];
        let mut m_pow: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        mo.initial_state_sq = norm_sq(&z0);

        for step in 0..steps {
            let j = step / n;
            let pos = step % n;
            let c = pos / uses;
            let s = path[j];
            let p = self.policy.power(s, c);
            let g = ch.gain(s);
            let snr = g * g * p / ch.noise_var();
            mo.state_sq[step] = norm_sq(&z);

            // encoder: normalised error, or the centred initial state
            // before the first informative use
            let x = if informed[c] { p.sqrt() * unit[c] } else { -p.sqrt() * unit[c] };
            mo.power[step] = x * x;
            if p > 0.0 {
                mo.power_ratio[step] = x * x / p;
                mo.power_ratio_sq[step] = (x * x / p).powi(2);
                mo.power_count[step] = 1;
            }
            let w = noise_sd * rng.sample::<f64, _>(StandardNormal);
            let y = g * x + w;

            // decoder
            if snr > 0.0 {
                if informed[c] {
                    // eps -= E[Y eps] / E[Y^2] * Y, then renormalise
                    let coeff = g * p.sqrt() / (g * g * p + ch.noise_var());
                    unit[c] = (unit[c] - coeff * y) * (0.5 * snr.ln_1p()).exp();
                    log_v[c] -= snr.ln_1p();
                } else {
                    // unbiased estimate Y / (g sqrt(P / var)) + mean
                    unit[c] = w / noise_sd;
                    log_v[c] -= snr.ln();
                    informed[c] = true;
                }
            }
            mo.eps_norm[step] = unit[c];
            mo.eps_norm_sq[step] = unit[c] * unit[c];

            // controller: Zbar(k) = Z(k) + A^k eps(k)
            let lift = step as f64 * self.log_rho;
            let zbar: Vec<f64> = (0..l)
                .map(|i| {
                    let v: f64 = (0..l)
                        .map(|q| {
                            let t = m_pow[i][q] * unit[q];
                            if t == 0.0 {
                                0.0
                            } else {
                                t.signum() * (t.abs().ln() + 0.5 * log_v[q] + lift).exp()
                            }
                        })
                        .sum();
                    z[i] + v
                })
                .collect();
            let u: f64 = self.k.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            z = (0..l)
                .map(|i| (0..l).map(|q| self.a[i][q] * z[q]).sum::<f64>() + self.b[i] * u)
                .collect();
            m_pow = mat_mul(&self.a_scaled, &m_pow);
            let zn = norm_sq(&z);
            if !zn.is_finite() || zn.sqrt() > OVERFLOW_GUARD {
                return Outcome::Overflow;
            }

            if pos == n - 1 {
                mo.alpha_ratio[j] = unit
                    .iter()
                    .zip(&log_v)
                    .map(|(r, lv)| r * r * (lv - self.log_alpha[j]).exp())
                    .sum();
                let chi = norm_sq(&unit) / l as f64;
                mo.chi[j] = chi;
                mo.chi_sq[j] = chi * chi;
                mo.block_state_sq[j] = zn;
            }
        }
        mo.final_state_sq = norm_sq(&z);
        if mo.final_state_sq > mo.initial_state_sq {
            mo.grown = 1;
        }
        Outcome::Done(mo)
    }
}

/// Runs `cfg.trials` independent closed-loop trials of `cfg.blocks` blocks.
/// Results are bit-identical for a given seed whatever the thread count.
pub fn run_closed_loop(
    problem: &Problem<f64>,
    policy: &PowerPolicy<f64>,
    cfg: &SimConfig,
) -> Result<SimTrace<f64>, SimError> {
    check_policy(problem, policy)?;
    let plant = problem.plant();
    let l = plant.dim();
    if let Some(s) = cfg.start_state {
        if s >= problem.num_states() {
            return Err(SimError::StartState(s));
        }
    }
    let gain = match &cfg.gain {
        Some(k) => {
            if k.len() != l {
                return Err(SimError::GainLength {
                    expected: l,
                    got: k.len(),
                });
            }
            k.clone()
        }
        None => deadbeat_gain(plant)?,
    };
    let radius = closed_loop_radius(plant, &gain);
    if !(radius < 1.0) {
        return Err(SimError::NonSchurGain { radius });
    }
    let (a, b) = jordan_form(plant);
    let rho = plant.eigenvalues().iter().copied().fold(1.0, f64::max);
    let a_scaled = a.iter().map(|r| r.iter().map(|x| x / rho).collect()).collect();
    let log_alpha = log_alpha_marginal(problem, policy, cfg.blocks, cfg.start_state)?;
    let pi = stationary_distribution(problem.fading())?;
    let lp = Loop {
        problem,
        policy,
        pi: pi.clone(),
        a,
        b,
        k: gain,
        a_scaled,
        log_rho: rho.ln(),
        log_alpha: log_alpha.clone(),
        blocks: cfg.blocks,
        seed: cfg.seed,
        start: cfg.start_state,
    };

    let n = problem.block_len();
    let steps = n * cfg.blocks;
    let mut path0 = vec![0; cfg.blocks];
    let chunks = cfg.trials.div_ceil(CHUNK);
    let partial: Vec<(Moments, usize)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = Moments::zeros(steps, cfg.blocks);
            let mut overflow = 0;
            for t in ci * CHUNK..((ci + 1) * CHUNK).min(cfg.trials) {
                match lp.trial(t, None) {
                    Outcome::Done(mo) => acc.add(&mo),
                    Outcome::Overflow => overflow += 1,
                }
            }
            (acc, overflow)
        })
        .collect();
    if cfg.trials > 0 {
        lp.trial(0, Some(&mut path0));
    }
    let mut total = Moments::zeros(steps, cfg.blocks);
    let mut overflowed = 0;
    for (mo, o) in &partial {
        total.add(mo);
        overflowed += o;
    }

    let done = total.trials.max(1) as f64;
    let alpha_analytic: Vec<f64> = log_alpha.iter().map(|x| x.exp()).collect();
    let alpha_empirical = total
        .alpha_ratio
        .iter()
        .zip(&log_alpha)
        .map(|(r, la)| r / done * la.exp())
        .collect();
    let realized_power = (0..cfg.blocks)
        .map(|j| total.power[j * n..(j + 1) * n].iter().sum::<f64>() / (done * n as f64))
        .collect();
    let scheduled_power = average_power(&pi, policy, l)?;
    Ok(SimTrace {
        num_trials: cfg.trials,
        num_blocks: cfg.blocks,
        block_len: n,
        dim: l,
        seed: cfg.seed,
        path: path0,
        log_alpha_analytic: log_alpha,
        alpha_analytic,
        alpha_empirical,
        mean_square_state: total.block_state_sq.iter().map(|x| x / done).collect(),
        mean_square_step: total.state_sq.iter().map(|x| x / done).collect(),
        initial_mean_square: total.initial_state_sq / done,
        realized_power,
        scheduled_power,
        overflowed,
        diverged: overflowed + total.grown,
        moments: total,
    })
}

/// Comparison of the empirical run against the analytic recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub trials: usize,
    /// Per block: mean of `|eps|^2` normalised by its path-conditional
    /// variance (one in expectation) and the half-width of its band.
    pub chi_mean: Vec<f64>,
    pub chi_band: Vec<f64>,
    /// Largest `|chi_mean - 1|`, i.e. relative deviation of the empirical
    /// error variance from the recursion.
    pub max_alpha_deviation: f64,
    /// Largest `|chi_mean - 1| / band`; at most one when in band.
    pub max_alpha_band_ratio: f64,
    pub alpha_in_band: bool,
    /// Largest `|mean eps / sd| / band` over steps.
    pub max_bias_band_ratio: f64,
    pub bias_in_band: bool,
    /// Largest `|mean X^2 / P - 1| / band` over steps with positive power.
    pub max_power_band_ratio: f64,
    pub power_in_band: bool,
    /// Largest relative gap between empirical and marginal analytic
    /// `alpha(j)`; informational, since the marginal is dominated by rare
    /// paths.
    pub max_marginal_deviation: f64,
}

impl ConsistencyReport {
    pub fn consistent(&self) -> bool {
        self.alpha_in_band && self.bias_in_band && self.power_in_band
    }
}

/// Two-sided normal quantile giving `CONFIDENCE` jointly over `family`
/// independent comparisons (Sidak correction).
fn band_quantile(family: usize) -> f64 {
    let each = 1.0 - CONFIDENCE.powf(1.0 / family.max(1) as f64);
    Normal::standard().inverse_cdf(1.0 - each / 2.0)
}

/// Half-width of the band for the mean of `count` samples with the given sum
/// and sum of squares.
fn half_width(sum: f64, sum_sq: f64, count: usize, z: f64) -> (f64, f64) {
    let c = count as f64;
    let mean = sum / c;
    let var = ((sum_sq - c * mean * mean) / (c - 1.0)).max(0.0);
    (mean, z * (var / c).sqrt())
}

fn in_band(dev: f64, band: f64) -> (bool, f64) {
    let ok = dev <= band + 1e-12 * (1.0 + band);
    let ratio = if band > 0.0 {
        dev / band
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (ok, ratio)
}

/// Checks the run against the analytic error-variance recursion, the
/// unbiasedness of the estimate and the power normalisation, each with
/// simultaneous `CONFIDENCE` bands derived from the trial variance.
pub fn empirical_vs_analytic<T: Scalar>(trace: &SimTrace<T>) -> Result<ConsistencyReport, SimError> {
    let mo = &trace.moments;
    if trace.num_trials < MIN_TRIALS || mo.trials < MIN_TRIALS {
        return Err(SimError::InsufficientTrials {
            got: mo.trials.min(trace.num_trials),
            need: MIN_TRIALS,
        });
    }
    let t = mo.trials;
    let zb = band_quantile(trace.num_blocks);
    let mut chi_mean = Vec::new();
    let mut chi_band = Vec::new();
    let mut alpha_ok = true;
    let mut max_dev: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    for j in 0..trace.num_blocks {
        let (mean, band) = half_width(mo.chi[j], mo.chi_sq[j], t, zb);
        let (ok, ratio) = in_band((mean - 1.0).abs(), band);
        alpha_ok &= ok;
        max_dev = max_dev.max((mean - 1.0).abs());
        max_ratio = max_ratio.max(ratio);
        chi_mean.push(mean);
        chi_band.push(band);
    }

    let steps = mo.eps_norm.len();
    let zs = band_quantile(steps);
    let mut bias_ok = true;
    let mut bias_ratio: f64 = 0.0;
    for k in 0..steps {
        let (mean, band) = half_width(mo.eps_norm[k], mo.eps_norm_sq[k], t, zs);
        let (ok, ratio) = in_band(mean.abs(), band);
        bias_ok &= ok;
        bias_ratio = bias_ratio.max(ratio);
    }

    let powered = mo.power_count.iter().filter(|&&c| c > 1).count();
    let zp = band_quantile(powered);
    let mut power_ok = true;
    let mut power_ratio: f64 = 0.0;
    for k in 0..steps {
        let c = mo.power_count[k];
        if c < 2 {
            continue;
        }
        let (mean, band) = half_width(mo.power_ratio[k], mo.power_ratio_sq[k], c, zp);
        let (ok, ratio) = in_band((mean - 1.0).abs(), band);
        power_ok &= ok;
        power_ratio = power_ratio.max(ratio);
    }

    let max_marginal = trace
        .alpha_empirical
        .iter()
        .zip(&trace.alpha_analytic)
        .filter(|(_, a)| a.f64() > 0.0)
        .map(|(e, a)| ((e.f64() - a.f64()) / a.f64()).abs())
        .fold(0.0, f64::max);

    Ok(ConsistencyReport {
        trials: t,
        chi_mean,
        chi_band,
        max_alpha_deviation: max_dev,
        max_alpha_band_ratio: max_ratio,
        alpha_in_band: alpha_ok,
        max_bias_band_ratio: bias_ratio,
        bias_in_band: bias_ok,
        max_power_band_ratio: power_ratio,
        power_in_band: power_ok,
        max_marginal_deviation: max_marginal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, FadingProcess};

    fn example(lambda: f64) -> (Problem<f64>, PowerPolicy<f64>) {
        let p = Problem::new(
            Plant::scalar(lambda, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0, 0.5], 1.0, 20).unwrap(),
            FadingProcess::iid(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        (p, PowerPolicy::per_state(vec![5.0, 4.7]).unwrap())
    }

    #[test]
    fn first_block_variance() {
        let (p, pol) = example(1.45);
        let a = alpha_recursion(&p, &pol, Some(&[0]), 1).unwrap();
        let expect = 0.2 * (1.0f64 / 6.0).powi(19);
        assert!((a[0] - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn zero_power_keeps_prior() {
        let (p, _) = example(1.45);
        let pol = PowerPolicy::per_state(vec![0.0, 0.0]).unwrap();
        let a = alpha_recursion(&p, &pol, None, 5).unwrap();
        assert!(a.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let c = alpha_recursion(&p, &pol, Some(&[0, 1, 1]), 3).unwrap();
        assert!(c.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn marginal_matches_iid_product() {
        let (p, pol) = example(1.45);
        let la = log_alpha_marginal(&p, &pol, 4, None).unwrap();
        let d = |snr: f64| 1.0 / (1.0 + snr);
        let first = 0.5 * (0.2 * d(5.0).powi(19)) + 0.5 * (1.0 / (0.25 * 4.7) * d(0.25 * 4.7).powi(19));
        let ed = 0.5 * d(5.0).powi(20) + 0.5 * d(0.25 * 4.7).powi(20);
        for (j, l) in la.iter().enumerate() {
            let want = first.ln() + j as f64 * ed.ln();
            assert!((l - want).abs() < 1e-12, "{j}: {l} vs {want}");
        }
    }

    #[test]
    fn deadbeat_places_poles_at_zero() {
        let plant = Plant::new(vec![1.5, 1.5, 2.0], vec![2, 1], vec![0.0; 3], vec![1.0; 3]).unwrap();
        let k = deadbeat_gain(&plant).unwrap();
        assert!(closed_loop_radius(&plant, &k) < 1e-4);
        let scalar = Plant::scalar(1.7, 0.0, 1.0).unwrap();
        assert!((deadbeat_gain(&scalar).unwrap()[0] + 1.7).abs() < 1e-14);
    }

    #[test]
    fn repeated_eigenvalue_blocks_are_uncontrollable() {
        let plant = Plant::new(vec![1.5, 1.5], vec![1, 1], vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(deadbeat_gain(&plant), Err(SimError::Uncontrollable));
    }

    #[test]
    fn non_schur_gain_rejected() {
        let (p, pol) = example(1.45);
        let cfg = SimConfig {
            trials: 10,
            blocks: 2,
            gain: Some(vec![0.0]),
            ..SimConfig::default()
        };
        assert!(matches!(run_closed_loop(&p, &pol, &cfg), Err(SimError::NonSchurGain { .. })));
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let (p, pol) = example(1.45);
        let cfg = SimConfig {
            trials: 300,
            blocks: 4,
            seed: 9,
            ..SimConfig::default()
        };
        let a = run_closed_loop(&p, &pol, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_closed_loop(&p, &pol, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_trials() {
        let (p, pol) = example(1.45);
        let cfg = SimConfig {
            trials: 10,
            blocks: 3,
            ..SimConfig::default()
        };
        let tr = run_closed_loop(&p, &pol, &cfg).unwrap();
        assert!(matches!(empirical_vs_analytic(&tr), Err(SimError::InsufficientTrials { .. })));
        assert_eq!(tr.to_csv(&[]).lines().count(), 4);
    }

    #[test]
    fn near_noiseless_channel_deadbeats() {
        let p = Problem::new(
            Plant::scalar(1.5, 0.0, 1.0).unwrap(),
            Channel::new(vec![1.0], 1e-12, 4).unwrap(),
            FadingProcess::iid(vec![1.0]).unwrap(),
        )
        .unwrap();
        let pol = PowerPolicy::per_state(vec![1.0]).unwrap();
        let cfg = SimConfig {
            trials: 1000,
            blocks: 1,
            ..SimConfig::default()
        };
        let tr = run_closed_loop(&p, &pol, &cfg).unwrap();
        assert!(tr.alpha_analytic[0] < 1e-40);
        assert!(tr.alpha_empirical[0] < 1e-40);
        assert!(tr.mean_square_state[0] < 1e-30);
        assert!(empirical_vs_analytic(&tr).unwrap().consistent());
    }
}
