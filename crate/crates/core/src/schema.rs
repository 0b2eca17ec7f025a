//! JSON problem description.
//!
//! ```json
//! {"plant": {"eigenvalues": [1.5], "jordan_blocks": [1], "init_mean": [0], "init_var": [1]},
//!  "channel": {"gains": [1, 0.5], "noise_var": 1, "block_len": 20},
//!  "fading": {"iid": [0.5, 0.5]}}
//! ```
//!
//! `jordan_blocks`, `init_mean` and `init_var` may be omitted; they default
//! to one block per eigenvalue, zero mean and unit variance.

use serde::{Deserialize, Serialize};

use crate::model::{Channel, FadingProcess, Plant, PowerPolicy, Problem, ValidationError, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jordan_blocks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub gains: Vec<f64>,
    pub noise_var: f64,
    pub block_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingSpec {
    Iid(Vec<f64>),
    Markov(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub plant: PlantSpec,
    pub channel: ChannelSpec,
    pub fading: FadingSpec,
}

/// Transmit powers: `{"per_state": [...]}` or `{"per_slot": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    PerState(Vec<f64>),
    PerSlot(Vec<Vec<f64>>),
}

impl PolicySpec {
    pub fn to_policy(&self) -> Result<PowerPolicy<f64>, ValidationError> {
        match self {
            PolicySpec::PerState(p) => PowerPolicy::per_state(p.clone()),
            PolicySpec::PerSlot(p) => PowerPolicy::tdma(p.clone()),
        }
    }
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Builds the problem described by `spec`, reporting every violated
/// invariant at once.
pub fn validate_problem(spec: &ProblemSpec) -> Result<Problem<f64>, ValidationError> {
    let l = spec.plant.eigenvalues.len();
    let plant = Plant::unchecked(
        spec.plant.eigenvalues.clone(),
        spec.plant.jordan_blocks.clone().unwrap_or_else(|| vec![1; l]),
        spec.plant.init_mean.clone().unwrap_or_else(|| vec![0.0; l]),
        spec.plant.init_var.clone().unwrap_or_else(|| vec![1.0; l]),
    );
    let channel = Channel::unchecked(spec.channel.gains.clone(), spec.channel.noise_var, spec.channel.block_len);
    let fading = match &spec.fading {
        FadingSpec::Iid(p) => FadingProcess::Iid(p.clone()),
        FadingSpec::Markov(q) => FadingProcess::Markov(q.clone()),
    };
    Problem::unchecked(plant, channel, fading).validate()
}

/// Inverse of [`validate_problem`].
pub fn to_spec(problem: &Problem<f64>) -> ProblemSpec {
    let plant = problem.plant();
    ProblemSpec {
        plant: PlantSpec {
            eigenvalues: plant.eigenvalues().to_vec(),
            jordan_blocks: Some(plant.jordan_blocks().to_vec()),
            init_mean: Some(plant.init_mean().to_vec()),
            init_var: Some(plant.init_var().to_vec()),
        },
        channel: ChannelSpec {
            gains: problem.channel().gains().to_vec(),
            noise_var: problem.channel().noise_var(),
            block_len: problem.block_len(),
        },
        fading: match problem.fading() {
            FadingProcess::Iid(p) => FadingSpec::Iid(p.clone()),
            FadingProcess::Markov(q) => FadingSpec::Markov(q.clone()),
        },
    }
}

/// True if the report names a divisibility failure.
pub fn is_divisibility(e: &ValidationError) -> bool {
    e.contains(|v| matches!(v, Violation::Divisibility { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "plant": {"eigenvalues": [1.5], "jordan_blocks": [1], "init_mean": [0.0], "init_var": [1.0]},
        "channel": {"gains": [1.0, 0.5], "noise_var": 1.0, "block_len": 20},
        "fading": {"iid": [0.5, 0.5]}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let spec = ProblemSpec::from_json(EXAMPLE).unwrap();
        let p = validate_problem(&spec).unwrap();
        assert_eq!(to_spec(&p), spec);
        assert_eq!(validate_problem(&to_spec(&p)).unwrap(), p);
    }

    #[test]
    fn defaults_fill_in() {
        let spec = ProblemSpec::from_json(
            r#"{"plant": {"eigenvalues": [1.2, 1.3]},
                "channel": {"gains": [1.0], "noise_var": 1.0, "block_len": 4},
                "fading": {"markov": [[1.0]]}}"#,
        )
        .unwrap();
        let p = validate_problem(&spec).unwrap();
        assert_eq!(p.plant().jordan_blocks(), &[1, 1]);
    }

    #[test]
    fn reports_every_violation() {
        let spec = ProblemSpec::from_json(
            r#"{"plant": {"eigenvalues": [1.2, 1.3, 1.4]},
                "channel": {"gains": [0.0, 0.0], "noise_var": 1.0, "block_len": 20},
                "fading": {"markov": [[1.0, 0.0], [0.0, 1.0]]}}"#,
        )
        .unwrap();
        let err = validate_problem(&spec).unwrap_err();
        assert!(is_divisibility(&err));
        assert!(err.contains(|v| matches!(v, Violation::DegenerateChannel)));
        assert!(err.contains(|v| matches!(v, Violation::ReducibleChain)));
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = EXAMPLE.replace("noise_var", "noise");
        assert!(ProblemSpec::from_json(&bad).is_err());
    }

    #[test]
    fn policy_spec() {
        let p: PolicySpec = serde_json::from_str(r#"{"per_state": [5.0, 4.7]}"#).unwrap();
        assert_eq!(p.to_policy().unwrap().state_powers(), &[5.0, 4.7]);
        let p: PolicySpec = serde_json::from_str(r#"{"per_slot": [[1.0, 2.0]]}"#).unwrap();
        assert!(p.to_policy().unwrap().slot_powers().is_some());
    }
}
