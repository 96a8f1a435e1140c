use ebgp::datagen::{gen_circle, CircleSpec};
use ebgp::kernel_gp::{marginal_log_likelihood, KernelParams};
use ebgp::rng::{rng_from_seed, Rng};
use ebgp::sampler::{metropolis_hastings, Proposal};
use rand::Rng as _;

/// Symmetric ±1 step on a ring of `m` states.
struct RingStep {
    m: usize,
}

impl Proposal<usize> for RingStep {
    fn propose(&self, current: &usize, rng: &mut Rng) -> (usize, f64) {
        let next = if rng.gen_bool(0.5) { (current + 1) % self.m } else { (current + self.m - 1) % self.m };
        (next, 0.0)
    }
}

#[test]
fn detailed_balance_on_ring() {
    let m = 8;
    let weights = [1.0, 3.0, 0.5, 2.0, 4.0, 1.5, 0.2, 2.5];
    let total: f64 = weights.iter().sum();
    let pi: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let n_iter = 1_000_001;
    let mut rng = rng_from_seed(2024);
    let run = metropolis_hastings(0usize, |&s| Ok(weights[s].ln()), &RingStep { m }, n_iter, &mut rng).unwrap();

    let mut counts = vec![vec![0u64; m]; m];
    for w in run.states.windows(2) {
        counts[w[0]][w[1]] += 1;
    }
    // stationary flows π_i P_ij and π_j P_ji are estimated by the transition counts themselves
    for i in 0..m {
        let j = (i + 1) % m;
        let (a, b) = (counts[i][j] as f64, counts[j][i] as f64);
        let sd = (a + b).sqrt();
        assert!((a - b).abs() <= 3.0 * sd, "flow {i}->{j} = {a} vs {j}->{i} = {b}");
    }
    // and the empirical transition matrix satisfies π_i P̂_ij ≈ π_j P̂_ji
    let visits: Vec<f64> = (0..m).map(|i| counts[i].iter().sum::<u64>() as f64).collect();
    for i in 0..m {
        let j = (i + 1) % m;
        let lhs = pi[i] * counts[i][j] as f64 / visits[i];
        let rhs = pi[j] * counts[j][i] as f64 / visits[j];
        let rel_sd = (1.0 / counts[i][j] as f64 + 1.0 / counts[j][i] as f64).sqrt();
        assert!((lhs / rhs - 1.0).abs() <= 3.0 * rel_sd, "balance {i}<->{j}: {lhs} vs {rhs}");
    }
    let n = (n_iter - 1) as f64;
    for i in 0..m {
        let freq = visits[i] / n;
        assert!((freq - pi[i]).abs() < 0.01, "state {i}: frequency {freq} vs {}", pi[i]);
    }
}

/// Deterministic swap between two bandwidths.
struct Swap {
    a: f64,
    b: f64,
}

impl Proposal<f64> for Swap {
    fn propose(&self, current: &f64, _rng: &mut Rng) -> (f64, f64) {
        (if *current == self.a { self.b } else { self.a }, 0.0)
    }
}

#[test]
fn two_state_swap_frequencies_follow_likelihood_ratio() {
    let ds = gen_circle(20, CircleSpec::default(), 0.3, 5, None).unwrap();
    let (t1, t2) = (0.02, 0.05);
    let ll = |t: f64| marginal_log_likelihood(ds.x.as_ref(), &ds.y, KernelParams::new(t, 0.09).unwrap()).unwrap();
    let (l1, l2) = (ll(t1), ll(t2));
    // pick the pair so neither state dominates
    assert!((l1 - l2).abs() < 5.0, "likelihoods too different: {l1} vs {l2}");
    let p1 = 1.0 / (1.0 + (l2 - l1).exp());
    let steps = 100_000;
    let mut rng = rng_from_seed(77);
    let flat = |&t: &f64| Ok(ll(t));
    let run = metropolis_hastings(t1, flat, &Swap { a: t1, b: t2 }, steps + 1, &mut rng).unwrap();
    let hits = run.states[1..].iter().filter(|&&t| t == t1).count() as f64;
    let n = steps as f64;
    let band = 3.0 * (p1 * (1.0 - p1) / n).sqrt();
    assert!((hits / n - p1).abs() <= band, "frequency {} vs {p1} ± {band}", hits / n);
}
