//! Domain types: plant, channel, fading process, power policy and the
//! problem that aggregates them.
//!
//! Every constructor validates its structural assumptions and rejects
//! non-finite input. Values are immutable once built.

use std::fmt;

use crate::scalar::Scalar;

/// Entries at or below this value are treated as absent edges when checking
/// irreducibility of a transition matrix.
pub const EDGE_THRESHOLD: f64 = 1e-15;

/// Row sums of stochastic matrices and IID probability vectors must equal one
/// to within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A single violated structural assumption.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Violation {
    #[error("{field} contains a non-finite value")]
    NonFinite { field: &'static str },
    #[error("plant has no eigenvalues")]
    EmptyPlant,
    #[error("eigenvalue magnitude #{index} = {value} is not unstable (must exceed 1)")]
    StableEigenvalue { index: usize, value: f64 },
    #[error("jordan block sizes sum to {sum}, plant dimension is {dim}")]
    JordanPartition { sum: usize, dim: usize },
    #[error("jordan block #{block} mixes different eigenvalue magnitudes")]
    JordanBlockMismatch { block: usize },
    #[error("{field} has length {got}, expected {expected}")]
    Length {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("initial variance #{index} = {value} must be strictly positive")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("channel has no gains")]
    EmptyChannel,
    #[error("all channel gains are zero")]
    DegenerateChannel,
    #[error("gain #{index} = {value} is negative")]
    NegativeGain { index: usize, value: f64 },
    #[error("gains #{first} and #{second} are equal")]
    DuplicateGain { first: usize, second: usize },
    #[error("noise variance {0} must be strictly positive")]
    NonPositiveNoise(f64),
    #[error("block length {0} must exceed 1")]
    BlockLength(usize),
    #[error("probability #{index} = {value} is negative")]
    NegativeProbability { index: usize, value: f64 },
    #[error("row {row} sums to {sum}, not 1")]
    Stochasticity { row: usize, sum: f64 },
    #[error("transition matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NonSquare { rows: usize, row: usize, cols: usize },
    #[error("markov chain is reducible")]
    ReducibleChain,
    #[error("fading process has {got} states but the channel has {expected} gains")]
    StateCount { expected: usize, got: usize },
    #[error("block length {block_len} is not a multiple of the plant dimension {dim}")]
    Divisibility { block_len: usize, dim: usize },
    #[error("power entry {what} = {value} is negative")]
    NegativePower { what: String, value: f64 },
}

/// Every violation found while validating an input.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError(pub Vec<Violation>);

impl ValidationError {
    pub fn violations(&self) -> &[Violation] {
        &self.0
    }

    pub fn contains(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid input: ")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

impl From<Violation> for ValidationError {
    fn from(v: Violation) -> Self {
        ValidationError(vec![v])
    }
}

fn finish<V>(value: V, violations: Vec<Violation>) -> Result<V, ValidationError> {
    if violations.is_empty() {
        Ok(value)
    } else {
        Err(ValidationError(violations))
    }
}

fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Linear plant in Jordan form, described by the magnitudes of its unstable
/// eigenvalues and the sizes of its Jordan blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant<T> {
    eigenvalues: Vec<T>,
    jordan_blocks: Vec<usize>,
    init_mean: Vec<T>,
    init_var: Vec<T>,
}

impl<T: Scalar> Plant<T> {
    pub fn new(
        eigenvalues: Vec<T>,
        jordan_blocks: Vec<usize>,
        init_mean: Vec<T>,
        init_var: Vec<T>,
    ) -> Result<Self, ValidationError> {
        let plant = Self::unchecked(eigenvalues, jordan_blocks, init_mean, init_var);
        let v = plant.violations();
        finish(plant, v)
    }

    pub(crate) fn unchecked(eigenvalues: Vec<T>, jordan_blocks: Vec<usize>, init_mean: Vec<T>, init_var: Vec<T>) -> Self {
        Plant {
            eigenvalues,
            jordan_blocks,
            init_mean,
            init_var,
        }
    }

    /// Scalar plant `Z(k+1) = lambda Z(k) + U(k)` with `Z(0) ~ (mean, var)`.
    pub fn scalar(lambda: T, mean: T, var: T) -> Result<Self, ValidationError> {
        Self::new(vec![lambda], vec![1], vec![mean], vec![var])
    }

    /// Diagonal plant (all Jordan blocks of size one) with zero-mean,
    /// unit-variance initial state.
    pub fn diagonal(eigenvalues: Vec<T>) -> Result<Self, ValidationError> {
        let l = eigenvalues.len();
        Self::new(eigenvalues, vec![1; l], vec![T::zero(); l], vec![T::one(); l])
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let l = self.eigenvalues.len();
        if l == 0 {
            v.push(Violation::EmptyPlant);
        }
        if !all_finite(&self.eigenvalues) {
            v.push(Violation::NonFinite { field: "eigenvalues" });
        }
        if !all_finite(&self.init_mean) {
            v.push(Violation::NonFinite { field: "init_mean" });
        }
        if !all_finite(&self.init_var) {
            v.push(Violation::NonFinite { field: "init_var" });
        }
        for (index, &lam) in self.eigenvalues.iter().enumerate() {
            if lam.is_finite() && lam <= T::one() {
                v.push(Violation::StableEigenvalue {
                    index,
                    value: lam.f64(),
                });
            }
        }
        let sum: usize = self.jordan_blocks.iter().sum();
        if sum != l || self.jordan_blocks.contains(&0) {
            v.push(Violation::JordanPartition { sum, dim: l });
        } else {
            let mut start = 0;
            for (block, &size) in self.jordan_blocks.iter().enumerate() {
                let first = self.eigenvalues[start];
                if self.eigenvalues[start..start + size]
                    .iter()
                    .any(|&x| x != first)
                {
                    v.push(Violation::JordanBlockMismatch { block });
                }
                start += size;
            }
        }
        for (field, xs) in [("init_mean", &self.init_mean), ("init_var", &self.init_var)] {
            if xs.len() != l {
                v.push(Violation::Length {
                    field,
                    expected: l,
                    got: xs.len(),
                });
            }
        }
        for (index, &s) in self.init_var.iter().enumerate() {
            if s.is_finite() && s <= T::zero() {
                v.push(Violation::NonPositiveVariance {
                    index,
                    value: s.f64(),
                });
            }
        }
        v
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.dim() == 1
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn jordan_blocks(&self) -> &[usize] {
        &self.jordan_blocks
    }

    pub fn init_mean(&self) -> &[T] {
        &self.init_mean
    }

    pub fn init_var(&self) -> &[T] {
        &self.init_var
    }

    /// `sum_i log|lambda_i| = log|det A|`.
    pub fn log_abs_det(&self) -> T {
        self.eigenvalues.iter().map(|x| x.ln()).sum()
    }

    /// True when every eigenvalue has the same magnitude.
    pub fn equal_magnitudes(&self) -> bool {
        let first = self.eigenvalues[0];
        self.eigenvalues.iter().all(|&x| x == first)
    }
}

/// Block-fading AWGN channel: finite gain alphabet, noise variance and block
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel<T> {
    gains: Vec<T>,
    noise_var: T,
    block_len: usize,
}

impl<T: Scalar> Channel<T> {
    pub fn new(gains: Vec<T>, noise_var: T, block_len: usize) -> Result<Self, ValidationError> {
        let ch = Self::unchecked(gains, noise_var, block_len);
        let v = ch.violations();
        finish(ch, v)
    }

    pub(crate) fn unchecked(gains: Vec<T>, noise_var: T, block_len: usize) -> Self {
        Channel {
            gains,
            noise_var,
            block_len,
        }
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.gains.is_empty() {
            v.push(Violation::EmptyChannel);
        }
        if !all_finite(&self.gains) {
            v.push(Violation::NonFinite { field: "gains" });
        }
        if !self.noise_var.is_finite() {
            v.push(Violation::NonFinite { field: "noise_var" });
        } else if self.noise_var <= T::zero() {
            v.push(Violation::NonPositiveNoise(self.noise_var.f64()));
        }
        if self.block_len <= 1 {
            v.push(Violation::BlockLength(self.block_len));
        }
        for (index, &g) in self.gains.iter().enumerate() {
            if g < T::zero() {
                v.push(Violation::NegativeGain {
                    index,
                    value: g.f64(),
                });
            }
            for (second, &h) in self.gains.iter().enumerate().skip(index + 1) {
                if g == h {
                    v.push(Violation::DuplicateGain {
                        first: index,
                        second,
                    });
                }
            }
        }
        if !self.gains.is_empty() && self.gains.iter().all(|&g| g == T::zero()) {
            v.push(Violation::DegenerateChannel);
        }
        v
    }

    pub fn num_states(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[T] {
        &self.gains
    }

    pub fn gain(&self, s: usize) -> T {
        self.gains[s]
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `g_s^2 P / N`, the received SNR in state `s` at power `p`.
    pub fn snr(&self, s: usize, p: T) -> T {
        let g = self.gains[s];
        g * g * p / self.noise_var
    }

    /// Copy with a different noise variance (used by sweeps).
    pub fn with_noise_var(&self, noise_var: T) -> Result<Self, ValidationError> {
        Self::new(self.gains.clone(), noise_var, self.block_len)
    }

    pub fn with_block_len(&self, block_len: usize) -> Result<Self, ValidationError> {
        Self::new(self.gains.clone(), self.noise_var, block_len)
    }
}

/// How the channel state evolves from block to block.
#[derive(Debug, Clone, PartialEq)]
pub enum FadingProcess<T> {
    /// Independent draws with the given state probabilities.
    Iid(Vec<T>),
    /// Markov chain with row-stochastic transition matrix `q[r][s]`.
    Markov(Vec<Vec<T>>),
}

impl<T: Scalar> FadingProcess<T> {
    pub fn iid(probs: Vec<T>) -> Result<Self, ValidationError> {
        let f = FadingProcess::Iid(probs);
        let v = f.violations();
        finish(f, v)
    }

    pub fn markov(q: Vec<Vec<T>>) -> Result<Self, ValidationError> {
        let f = FadingProcess::Markov(q);
        let v = f.violations();
        finish(f, v)
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let tol = T::tol(STOCHASTIC_TOL);
        let check_row = |row: usize, xs: &[T], v: &mut Vec<Violation>| {
            if !all_finite(xs) {
                v.push(Violation::NonFinite { field: "fading" });
                return;
            }
            for (index, &p) in xs.iter().enumerate() {
                if p < T::zero() {
                    v.push(Violation::NegativeProbability {
                        index,
                        value: p.f64(),
                    });
                }
            }
            let sum: T = xs.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                v.push(Violation::Stochasticity { row, sum: sum.f64() });
            }
        };
        match self {
            FadingProcess::Iid(p) => {
                if p.is_empty() {
                    v.push(Violation::EmptyChannel);
                }
                check_row(0, p, &mut v);
            }
            FadingProcess::Markov(q) => {
                if q.is_empty() {
                    v.push(Violation::EmptyChannel);
                }
                let m = q.len();
                let mut square = true;
                for (row, r) in q.iter().enumerate() {
                    if r.len() != m {
                        square = false;
                        v.push(Violation::NonSquare {
                            rows: m,
                            row,
                            cols: r.len(),
                        });
                    }
                    check_row(row, r, &mut v);
                }
                if square && m > 0 && !is_irreducible(q, T::c(EDGE_THRESHOLD)) {
                    v.push(Violation::ReducibleChain);
                }
            }
        }
        v
    }

    pub fn num_states(&self) -> usize {
        match self {
            FadingProcess::Iid(p) => p.len(),
            FadingProcess::Markov(q) => q.len(),
        }
    }

    pub fn is_markov(&self) -> bool {
        matches!(self, FadingProcess::Markov(_))
    }

    /// Transition matrix; an IID process is the rank-one chain whose rows all
    /// equal the probability vector.
    pub fn transition_matrix(&self) -> Vec<Vec<T>> {
        match self {
            FadingProcess::Iid(p) => vec![p.clone(); p.len()],
            FadingProcess::Markov(q) => q.clone(),
        }
    }
}

/// Strong connectivity of the graph with an edge `r -> s` whenever
/// `q[r][s] > threshold`.
pub fn is_irreducible<T: Scalar>(q: &[Vec<T>], threshold: T) -> bool {
    let m = q.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in 0..m {
                let e = if forward { q[u][w] } else { q[w][u] };
                if e > threshold && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

/// Transmit powers per channel state, and per TDMA slot for vector plants.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolicy<T> {
    per_state: Vec<T>,
    per_slot: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> PowerPolicy<T> {
    /// One power level per channel state.
    pub fn per_state(powers: Vec<T>) -> Result<Self, ValidationError> {
        let mut v = Vec::new();
        if !all_finite(&powers) {
            v.push(Violation::NonFinite { field: "power" });
        }
        for (s, &p) in powers.iter().enumerate() {
            if p < T::zero() {
                v.push(Violation::NegativePower {
                    what: format!("P[{s}]"),
                    value: p.f64(),
                });
            }
        }
        finish(
            PowerPolicy {
                per_state: powers,
                per_slot: None,
            },
            v,
        )
    }

    /// Slot powers `slots[s][i]` for state `s` and subsystem `i`; the block
    /// power of each state is the slot average.
    pub fn tdma(slots: Vec<Vec<T>>) -> Result<Self, ValidationError> {
        let mut v = Vec::new();
        let l = slots.first().map_or(0, Vec::len);
        for (s, row) in slots.iter().enumerate() {
            if row.len() != l || l == 0 {
                v.push(Violation::Length {
                    field: "per_slot",
                    expected: l.max(1),
                    got: row.len(),
                });
            }
            if !all_finite(row) {
                v.push(Violation::NonFinite { field: "per_slot" });
            }
            for (i, &p) in row.iter().enumerate() {
                if p < T::zero() {
                    v.push(Violation::NegativePower {
                        what: format!("P[{s},{i}]"),
                        value: p.f64(),
                    });
                }
            }
        }
        let per_state = slots
            .iter()
            .map(|row| row.iter().copied().sum::<T>() / T::of_usize(row.len().max(1)))
            .collect();
        finish(
            PowerPolicy {
                per_state,
                per_slot: Some(slots),
            },
            v,
        )
    }

    pub fn num_states(&self) -> usize {
        self.per_state.len()
    }

    pub fn state_powers(&self) -> &[T] {
        &self.per_state
    }

    pub fn slot_powers(&self) -> Option<&[Vec<T>]> {
        self.per_slot.as_deref()
    }

    /// Power used in state `s` during the slot of subsystem `i`.
    pub fn power(&self, s: usize, i: usize) -> T {
        match &self.per_slot {
            Some(slots) => slots[s][i],
            None => self.per_state[s],
        }
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        PowerPolicy {
            per_state: self.per_state.iter().map(|&p| p * factor).collect(),
            per_slot: self
                .per_slot
                .as_ref()
                .map(|s| s.iter().map(|r| r.iter().map(|&p| p * factor).collect()).collect()),
        }
    }
}

/// A plant, a channel and a fading process that agree with each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T> {
    plant: Plant<T>,
    channel: Channel<T>,
    fading: FadingProcess<T>,
}

impl<T: Scalar> Problem<T> {
    pub fn new(
        plant: Plant<T>,
        channel: Channel<T>,
        fading: FadingProcess<T>,
    ) -> Result<Self, ValidationError> {
        Self::unchecked(plant, channel, fading).validate()
    }

    pub(crate) fn unchecked(plant: Plant<T>, channel: Channel<T>, fading: FadingProcess<T>) -> Self {
        Problem {
            plant,
            channel,
            fading,
        }
    }

    pub(crate) fn violations(&self) -> Vec<Violation> {
        let mut v = self.plant.violations();
        v.extend(self.channel.violations());
        v.extend(self.fading.violations());
        v.extend(self.cross_violations());
        v
    }

    fn cross_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let l = self.plant.dim();
        let n = self.channel.block_len();
        if l > 1 && !n.is_multiple_of(l) {
            v.push(Violation::Divisibility {
                block_len: n,
                dim: l,
            });
        }
        if self.fading.num_states() != self.channel.num_states() {
            v.push(Violation::StateCount {
                expected: self.channel.num_states(),
                got: self.fading.num_states(),
            });
        }
        v
    }

    /// Re-checks every invariant; a validated problem passes unchanged.
    pub fn validate(self) -> Result<Self, ValidationError> {
        let v = self.violations();
        finish(self, v)
    }

    pub fn plant(&self) -> &Plant<T> {
        &self.plant
    }

    pub fn channel(&self) -> &Channel<T> {
        &self.channel
    }

    pub fn fading(&self) -> &FadingProcess<T> {
        &self.fading
    }

    pub fn dim(&self) -> usize {
        self.plant.dim()
    }

    pub fn num_states(&self) -> usize {
        self.channel.num_states()
    }

    pub fn block_len(&self) -> usize {
        self.channel.block_len()
    }

    pub fn with_plant(&self, plant: Plant<T>) -> Result<Self, ValidationError> {
        Self::new(plant, self.channel.clone(), self.fading.clone())
    }

    pub fn with_channel(&self, channel: Channel<T>) -> Result<Self, ValidationError> {
        Self::new(self.plant.clone(), channel, self.fading.clone())
    }

    pub fn with_fading(&self, fading: FadingProcess<T>) -> Result<Self, ValidationError> {
        Self::new(self.plant.clone(), self.channel.clone(), fading)
    }
}
