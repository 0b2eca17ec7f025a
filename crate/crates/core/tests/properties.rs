use fading_stab::fading::{sample_path, stationary_distribution};
use fading_stab::gp::{min_power, min_power_uniform};
use fading_stab::model::{Channel, FadingProcess, Plant, PowerPolicy, Problem};
use fading_stab::stability::{
    check, contraction_diagonal, lambda_max, lyapunov_feasible, spectral_radius, tdma_capacity_gap,
};
use proptest::prelude::*;

fn gains(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.5, m).prop_map(|steps| {
        steps
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    })
}

fn probs(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, m).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.iter().map(|x| x / t).collect()
    })
}

fn transition(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(probs(m), m)
}

#[derive(Debug, Clone)]
struct Iid {
    lambda: f64,
    n: usize,
    g: Vec<f64>,
    pi: Vec<f64>,
    noise: f64,
    p: Vec<f64>,
}

impl Iid {
    fn problem(&self) -> Problem<f64> {
        scalar_problem(self.lambda, self.n, &self.g, self.noise, FadingProcess::iid(self.pi.clone()).unwrap())
    }

    fn policy(&self) -> PowerPolicy<f64> {
        PowerPolicy::per_state(self.p.clone()).unwrap()
    }
}

fn iid_instance() -> impl Strategy<Value = Iid> {
    (1usize..=4)
        .prop_flat_map(|m| {
            (
                1.01f64..2.0,
                2usize..=30,
                gains(m),
                probs(m),
                0.2f64..5.0,
                prop::collection::vec(0.0f64..20.0, m),
            )
        })
        .prop_map(|(lambda, n, g, pi, noise, p)| Iid {
            lambda,
            n,
            g,
            pi,
            noise,
            p,
        })
}

fn scalar_problem(lambda: f64, n: usize, g: &[f64], noise: f64, fading: FadingProcess<f64>) -> Problem<f64> {
    Problem::new(
        Plant::scalar(lambda, 0.0, 1.0).unwrap(),
        Channel::new(g.to_vec(), noise, n).unwrap(),
        fading,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn margin_decreases_in_lambda(inst in iid_instance(), bump in 0.001f64..0.5) {
        let a = check(&inst.problem(), &inst.policy()).unwrap();
        let mut bigger = inst.clone();
        bigger.lambda += bump;
        let b = check(&bigger.problem(), &bigger.policy()).unwrap();
        prop_assert!(b.margin < a.margin);
        prop_assert!(a.stabilizable || !b.stabilizable);
    }

    #[test]
    fn margin_increases_in_power(inst in iid_instance(), factor in 1.01f64..4.0) {
        let a = check(&inst.problem(), &inst.policy()).unwrap();
        let b = check(&inst.problem(), &inst.policy().scaled(factor)).unwrap();
        prop_assert!(b.margin >= a.margin - 1e-12);
    }

    #[test]
    fn noise_and_power_scale_together(inst in iid_instance(), k in 0.1f64..10.0) {
        let a = check(&inst.problem(), &inst.policy()).unwrap();
        let mut scaled = inst.clone();
        scaled.noise *= k;
        let b = check(&scaled.problem(), &inst.policy().scaled(k)).unwrap();
        prop_assert!((a.margin - b.margin).abs() < 1e-9 * (1.0 + a.margin.abs()));
    }

    #[test]
    fn single_precision_agrees(inst in iid_instance()) {
        let a = check(&inst.problem(), &inst.policy()).unwrap();
        let g: Vec<f32> = inst.g.iter().map(|&x| x as f32).collect();
        let pi: Vec<f32> = inst.pi.iter().map(|&x| x as f32).collect();
        let p32 = Problem::new(
            Plant::scalar(inst.lambda as f32, 0.0, 1.0).unwrap(),
            Channel::new(g, inst.noise as f32, inst.n).unwrap(),
            FadingProcess::iid(pi).unwrap(),
        )
        .unwrap();
        let pol32 = PowerPolicy::per_state(inst.p.iter().map(|&x| x as f32).collect()).unwrap();
        let b = check(&p32, &pol32).unwrap();
        prop_assert!((a.margin - b.margin as f64).abs() < 1e-4 * (1.0 + a.margin.abs()));
    }

    #[test]
    fn lambda_max_is_the_boundary(inst in iid_instance()) {
        let problem = inst.problem();
        let lm = lambda_max(&problem, &inst.policy()).unwrap();
        prop_assume!(lm.is_finite() && lm > 1.0 + 1e-6);
        let at = |lambda: f64| {
            let mut i = inst.clone();
            i.lambda = lambda;
            check(&i.problem(), &i.policy()).unwrap().stabilizable
        };
        prop_assert!(at(1.0 + (lm - 1.0) * 0.999));
        prop_assert!(!at(lm * 1.001));
    }

    #[test]
    fn spectral_radius_within_contraction_range(
        (q, g, p) in (1usize..=5).prop_flat_map(|m| (transition(m), gains(m), prop::collection::vec(0.0f64..10.0, m))),
        n in 2usize..=30,
    ) {
        let problem = scalar_problem(1.2, n, &g, 1.0, FadingProcess::markov(q.clone()).unwrap());
        let policy = PowerPolicy::per_state(p).unwrap();
        let d = contraction_diagonal(problem.channel(), &policy, problem.plant()).unwrap();
        let m = q.len();
        let qt_d: Vec<Vec<f64>> = (0..m).map(|s| (0..m).map(|r| q[r][s] * d.value(r)).collect()).collect();
        let rho = spectral_radius(&qt_d).unwrap();
        let (lo, hi) = (0..m).fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(d.value(s)), hi.max(d.value(s))));
        prop_assert!(rho <= hi * (1.0 + 1e-9) + 1e-300);
        prop_assert!(rho >= lo * (1.0 - 1e-9));
    }

    #[test]
    fn stationary_distribution_is_invariant(q in (1usize..=6).prop_flat_map(transition)) {
        let pi = stationary_distribution(&FadingProcess::markov(q.clone()).unwrap()).unwrap();
        let pi = pi.probabilities();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for s in 0..q.len() {
            let next: f64 = (0..q.len()).map(|r| pi[r] * q[r][s]).sum();
            prop_assert!(pi[s] >= 0.0);
            prop_assert!((next - pi[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn lyapunov_witness_satisfies_inequalities(
        (q, g, p) in (1usize..=4).prop_flat_map(|m| (transition(m), gains(m), prop::collection::vec(0.0f64..10.0, m))),
        lambda in 1.01f64..1.8,
        n in 2usize..=20,
    ) {
        let problem = scalar_problem(lambda, n, &g, 1.0, FadingProcess::markov(q.clone()).unwrap());
        let policy = PowerPolicy::per_state(p).unwrap();
        let cert = lyapunov_feasible(&problem, &policy).unwrap();
        prop_assert_eq!(cert.feasible, check(&problem, &policy).unwrap().stabilizable);
        if let Some(v) = cert.witness() {
            let d = contraction_diagonal(problem.channel(), &policy, problem.plant()).unwrap();
            let lift = 2.0 * n as f64 * lambda.ln();
            for s in 0..q.len() {
                let inflow: f64 = (0..q.len()).map(|r| q[r][s] * v[r]).sum();
                prop_assert!(v[s] > 0.0);
                prop_assert!(v[s] > (lift + d.log(s)).exp() * inflow);
            }
        }
    }

    #[test]
    fn tdma_gap_is_nonnegative(
        slots in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 2), 2),
        n_half in 1usize..=10,
    ) {
        let problem = Problem::new(
            Plant::diagonal(vec![1.1, 1.3]).unwrap(),
            Channel::new(vec![0.5, 1.0], 1.0, 2 * n_half).unwrap(),
            FadingProcess::iid(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let policy = PowerPolicy::tdma(slots.clone()).unwrap();
        for (s, gap) in tdma_capacity_gap(&problem, &policy).into_iter().enumerate() {
            prop_assert!(gap >= -1e-12);
            if (slots[s][0] - slots[s][1]).abs() < 1e-300 {
                prop_assert!(gap.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_paths_are_reproducible(q in (1usize..=4).prop_flat_map(transition), seed: u64) {
        let f = FadingProcess::markov(q).unwrap();
        let a = sample_path(&f, 50, seed, None).unwrap();
        prop_assert_eq!(&a, &sample_path(&f, 50, seed, None).unwrap());
        prop_assert_eq!(&a[..10], &sample_path(&f, 10, seed, None).unwrap()[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adapted_power_never_exceeds_uniform(inst in iid_instance()) {
        let problem = inst.problem();
        let adapted = min_power(&problem).unwrap();
        let uniform = min_power_uniform(&problem).unwrap();
        prop_assert!(adapted.p_star <= uniform.p_star * (1.0 + 1e-6));
    }

    #[test]
    fn optimal_power_scales_with_noise(inst in iid_instance(), k in 0.2f64..5.0) {
        let a = min_power(&inst.problem()).unwrap();
        let mut scaled = inst.clone();
        scaled.noise *= k;
        let b = min_power(&scaled.problem()).unwrap();
        prop_assert!((b.p_star - k * a.p_star).abs() < 1e-5 * k * a.p_star);
    }
}

/// Minimum average power for a scalar plant over IID fading from the
/// stationarity conditions: with multiplier `mu`, each live state uses
/// `1 + g^2 P / N = max(1, (mu n g^2 / N)^{1/(n+1)})`, and `mu` is set by
/// bisection so that the stability constraint is active.
fn water_filling(lambda: f64, n: usize, g: &[f64], pi: &[f64], noise: f64) -> f64 {
    let nf = n as f64;
    let budget = -2.0 * nf * lambda.ln();
    let powers = |log_mu: f64| -> Vec<f64> {
        g.iter()
            .map(|&gs| {
                let level = ((log_mu + (nf * gs * gs / noise).ln()) / (nf + 1.0)).exp();
                (level.max(1.0) - 1.0) * noise / (gs * gs)
            })
            .collect()
    };
    let feasible = |log_mu: f64| {
        let p = powers(log_mu);
        let e: f64 = (0..g.len())
            .map(|s| pi[s] * (-nf * (g[s] * g[s] * p[s] / noise).ln_1p()).exp())
            .sum();
        e.ln() < budget
    };
    let (mut lo, mut hi) = (-50.0, 0.0);
    while !feasible(hi) {
        lo = hi;
        hi += 10.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    powers(hi).iter().zip(pi).map(|(p, q)| p * q).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_state_optimum_matches_water_filling(
        lambda in 1.05f64..1.6,
        n in 2usize..=30,
        g in gains(2),
        pi in probs(2),
        noise in 0.3f64..3.0,
    ) {
        let problem = scalar_problem(lambda, n, &g, noise, FadingProcess::iid(pi.clone()).unwrap());
        let sol = min_power(&problem).unwrap();
        let oracle = water_filling(lambda, n, &g, &pi, noise);
        prop_assert!((sol.p_star - oracle).abs() < 1e-6 * oracle, "{} vs {}", sol.p_star, oracle);
    }
}

#[test]
fn equal_pair_plant_matches_squared_scalar() {
    for &lambda in &[1.05, 1.2, 1.4, 1.6] {
        for &(p1, p2) in &[(3.0, 1.0), (8.0, 2.5), (0.5, 9.0)] {
            let n = 12;
            let vector = Problem::new(
                Plant::diagonal(vec![lambda, lambda]).unwrap(),
                Channel::new(vec![1.0, 0.5], 1.0, n).unwrap(),
                FadingProcess::iid(vec![0.4, 0.6]).unwrap(),
            )
            .unwrap();
            let scalar = scalar_problem(lambda * lambda, n / 2, &[1.0, 0.5], 1.0, FadingProcess::iid(vec![0.4, 0.6]).unwrap());
            let v = check(&vector, &PowerPolicy::tdma(vec![vec![p1, p1], vec![p2, p2]]).unwrap()).unwrap();
            let s = check(&scalar, &PowerPolicy::per_state(vec![p1, p2]).unwrap()).unwrap();
            assert_eq!(v.stabilizable, s.stabilizable, "lambda {lambda}");
            assert!((v.margin - s.margin).abs() < 1e-12, "{} {}", v.margin, s.margin);
        }
    }
}

#[test]
fn single_state_channel_has_closed_form_boundary() {
    // one state, g = 1, N = 1, P = 3: lambda_max = (1 + 3)^{1/2}
    let problem = scalar_problem(1.5, 10, &[1.0], 1.0, FadingProcess::iid(vec![1.0]).unwrap());
    let lm = lambda_max(&problem, &PowerPolicy::per_state(vec![3.0]).unwrap()).unwrap();
    assert!((lm - 2.0).abs() < 1e-10, "{lm}");
    let sol = min_power(&problem).unwrap();
    assert!((sol.p_star - (1.5f64 * 1.5 - 1.0)).abs() < 1e-8, "{}", sol.p_star);
}
