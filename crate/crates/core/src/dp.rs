//! Privacy accounting and noise primitives.
//!
//! Budgets are tracked in zero-concentrated DP. A target `(ε, δ)` is turned
//! into a total `ρ`, split evenly across the three stages of a synthesis run
//! (one-way measurement, edge selection, two-way measurement):
//!
//! * each measurement stage releases a group of `k` marginals as one vector
//!   query with ℓ2-sensitivity `√k` under add/remove-one neighbours, noised
//!   with `σ = √(k / 2ρ′)`;
//! * edge selection runs `d − 1` exponential mechanisms with
//!   `ε′ = √(8ρ′ / (d − 1))`, each accounted as `ε′²/8`-zCDP.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Total zCDP budget equivalent to `(ε, δ)`:
/// `ρ = (√(ln(1/δ) + ε) − √(ln(1/δ)))²`.
pub fn zcdp_from_eps_delta(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::argument(format!("epsilon must be positive, got {epsilon}")));
    }
    check_delta(delta)?;
    let log_inv = (1.0 / delta).ln();
    // √(L+ε) − √L written without cancellation.
    let root_gap = epsilon / ((log_inv + epsilon).sqrt() + log_inv.sqrt());
    Ok(root_gap * root_gap)
}

/// `ε = ρ + 2√(ρ ln(1/δ))` for a `ρ`-zCDP mechanism.
pub fn eps_from_zcdp(rho: f64, delta: f64) -> Result<f64> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::argument(format!("rho must be nonnegative, got {rho}")));
    }
    check_delta(delta)?;
    if rho == 0.0 {
        log::warn!("rho = 0 gives epsilon = 0; nothing can be released");
        return Ok(0.0);
    }
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Budget split for one synthesis run over `d` attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub d: usize,
    /// Allocated total, `3ρ′`. Equals the `(ε, δ)` conversion up to one
    /// rounding step and never exceeds it.
    pub rho: f64,
    /// `ρ′ = ρ/3`, the budget of each stage.
    pub rho_stage: f64,
    /// `σ_G = 1/√(2ρ′)`, the scale for a unit-sensitivity query.
    pub sigma_g_base: f64,
    /// Exponential-mechanism parameter per selection round.
    pub eps_prime: f64,
    /// Noise scale for the group of `d` one-way marginals.
    pub sigma_one_way: f64,
    /// Noise scale for the group of `d − 1` edge marginals.
    pub sigma_two_way: f64,
}

impl PrivacyBudget {
    /// Plans a run from an `(ε, δ)` target.
    pub fn plan(epsilon: f64, delta: f64, d: usize) -> Result<Self> {
        let rho = zcdp_from_eps_delta(epsilon, delta)?;
        Self::build(epsilon, delta, d, rho)
    }

    /// Plans a run directly from a total `ρ`; `epsilon` is derived.
    pub fn from_rho(rho: f64, delta: f64, d: usize) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::argument(format!("rho must be positive, got {rho}")));
        }
        let epsilon = eps_from_zcdp(rho, delta)?;
        Self::build(epsilon, delta, d, rho)
    }

    fn build(epsilon: f64, delta: f64, d: usize, target_rho: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::argument(format!("need at least 2 attributes, got {d}")));
        }
        let rho_stage = split_in_three(target_rho);
        let rho = rho_stage + rho_stage + rho_stage;
        let sigma_g_base = 1.0 / (2.0 * rho_stage).sqrt();
        Ok(PrivacyBudget {
            epsilon,
            delta,
            d,
            rho,
            rho_stage,
            sigma_g_base,
            eps_prime: round_eps(d - 1, rho_stage),
            sigma_one_way: group_scale(d, rho_stage),
            sigma_two_way: group_scale(d - 1, rho_stage),
        })
    }

    /// zCDP cost of each stage recomputed from the released parameters:
    /// `[k₁/(2σ₁²), (d−1)·ε′²/8, k₂/(2σ₂²)]`.
    pub fn stage_costs(&self) -> [f64; 3] {
        let d = self.d as f64;
        [
            d / (2.0 * self.sigma_one_way * self.sigma_one_way),
            (d - 1.0) * self.eps_prime * self.eps_prime / 8.0,
            (d - 1.0) / (2.0 * self.sigma_two_way * self.sigma_two_way),
        ]
    }
}

/// Largest `x` with `3x <= total` in floating point, so the three stage
/// budgets add up to the allocated total exactly and never exceed the target.
fn split_in_three(total: f64) -> f64 {
    let mut x = total / 3.0;
    while x * 3.0 > total {
        x = f64::from_bits(x.to_bits() - 1);
    }
    x
}

/// Gaussian scale for a group of `k` unit-sensitivity marginals at budget
/// `rho_stage`, rounded up so that `k/(2σ²)` never exceeds `rho_stage`.
pub fn group_scale(k: usize, rho_stage: f64) -> f64 {
    let k = k as f64;
    let mut sigma = (k / (2.0 * rho_stage)).sqrt();
    while k / (2.0 * sigma * sigma) > rho_stage {
        sigma = sigma.next_up();
    }
    sigma
}

/// Per-round `ε′ = √(8ρ′/m)`, rounded down so that `m·ε′²/8` never exceeds `rho_stage`.
fn round_eps(m: usize, rho_stage: f64) -> f64 {
    let m = m as f64;
    let mut eps = (8.0 * rho_stage / m).sqrt();
    while m * eps * eps / 8.0 > rho_stage {
        eps = eps.next_down();
    }
    eps
}

/// Budget plan with explicit group sizes. `m1` must equal `d` and `m2` must
/// equal `d − 1`.
pub fn stage_plan(epsilon: f64, delta: f64, d: usize, m1: usize, m2: usize) -> Result<PrivacyBudget> {
    if d < 2 {
        return Err(Error::argument(format!("need at least 2 attributes, got {d}")));
    }
    if m1 != d || m2 + 1 != d {
        return Err(Error::argument(format!(
            "group sizes must be (d, d-1) = ({d}, {}), got ({m1}, {m2})",
            d - 1
        )));
    }
    PrivacyBudget::plan(epsilon, delta, d)
}

/// A deterministic random stream identified by a root seed and a label.
///
/// Streams with different labels are independent, so components can draw
/// in any order without disturbing each other.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut h = Sha256::new();
        h.update(b"privci.rng.v1");
        h.update(seed.to_le_bytes());
        h.update(label.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        RngStream {
            seed,
            label,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// Independent stream labelled `"{self.label}/{label}"`.
    pub fn child(&self, label: &str) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}", self.label, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Adds independent `N(0, σ²)` noise to every coordinate.
pub fn gaussian_mechanism(values: &[f64], sigma: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::argument(format!("gaussian scale must be positive, got {sigma}")));
    }
    Ok(values
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect())
}

/// Selection probabilities `∝ exp(ε′·q/(2Δq))`, computed from max-shifted
/// exponents. `ε′ = ∞` puts all mass on the first maximizer.
pub fn selection_probabilities(scores: &[f64], eps_prime: f64, delta_q: f64) -> Result<Vec<f64>> {
    check_selection(scores, eps_prime, delta_q)?;
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if eps_prime.is_infinite() {
        let first = scores.iter().position(|&s| s == best).expect("nonempty");
        let mut p = vec![0.0; scores.len()];
        p[first] = 1.0;
        return Ok(p);
    }
    let scale = eps_prime / (2.0 * delta_q);
    let weights: Vec<f64> = scores.iter().map(|&s| (scale * (s - best)).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Draws one candidate with probability `∝ exp(ε′·score/(2Δq))`.
pub fn exponential_mechanism<T: Copy>(
    candidates: &[T],
    scores: &[f64],
    eps_prime: f64,
    delta_q: f64,
    rng: &mut RngStream,
) -> Result<T> {
    if candidates.len() != scores.len() {
        return Err(Error::argument(format!(
            "{} candidates but {} scores",
            candidates.len(),
            scores.len()
        )));
    }
    let p = selection_probabilities(scores, eps_prime, delta_q)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return Ok(candidates[k]);
        }
    }
    // Rounding left `acc` just under 1; fall back to the last candidate with mass.
    let last = p.iter().rposition(|&pk| pk > 0.0).expect("probabilities sum to 1");
    Ok(candidates[last])
}

fn check_selection(scores: &[f64], eps_prime: f64, delta_q: f64) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Selection("empty candidate set".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::argument("scores must be finite"));
    }
    if eps_prime.is_nan() || eps_prime <= 0.0 {
        return Err(Error::argument(format!("eps' must be positive, got {eps_prime}")));
    }
    if !(delta_q.is_finite() && delta_q > 0.0) {
        return Err(Error::argument(format!("score sensitivity must be positive, got {delta_q}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn zcdp_reference_value() {
        // 30-digit evaluation: 0.0117811603952014194610280972221
        let rho = zcdp_from_eps_delta(1.0, 1e-9).unwrap();
        assert_relative_eq!(rho, 0.011_781_160_395_201_42, max_relative = 1e-13);
    }

    #[test]
    fn eps_reference_value() {
        // 30-digit evaluation: 5.7565217697569319786301213581
        let eps = eps_from_zcdp(0.5, 1e-6).unwrap();
        assert_relative_eq!(eps, 5.756_521_769_756_932, max_relative = 1e-13);
    }

    #[test]
    fn boundary_and_domain_errors() {
        assert_eq!(eps_from_zcdp(0.0, 1e-6).unwrap(), 0.0);
        assert!(eps_from_zcdp(-1.0, 1e-6).is_err());
        assert!(zcdp_from_eps_delta(0.0, 1e-6).is_err());
        assert!(zcdp_from_eps_delta(1.0, 1.0).is_err());
        assert!(zcdp_from_eps_delta(1.0, 0.0).is_err());
        assert!(zcdp_from_eps_delta(1e-12, 1e-9).unwrap() < 1e-20);
    }

    #[test]
    fn stage_examples() {
        // ρ′ = 0.5 ⇒ σ_G = 1; d = 4 ⇒ one-way σ = √4 = 2.
        let b = PrivacyBudget::from_rho(1.5, 1e-9, 4).unwrap();
        assert_relative_eq!(b.rho_stage, 0.5, max_relative = 1e-15);
        assert_relative_eq!(b.sigma_g_base, 1.0, max_relative = 1e-12);
        assert_relative_eq!(b.sigma_one_way, 2.0, max_relative = 1e-12);
        assert_relative_eq!(b.sigma_two_way, 3f64.sqrt(), max_relative = 1e-12);
        // ρ′ = 2, d = 5 ⇒ ε′ = √(16/4) = 2.
        let b = PrivacyBudget::from_rho(6.0, 1e-9, 5).unwrap();
        assert_relative_eq!(b.eps_prime, 2.0, max_relative = 1e-12);
        for cost in b.stage_costs() {
            assert_relative_eq!(cost, 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn stage_plan_checks_group_sizes() {
        assert!(stage_plan(1.0, 1e-9, 4, 4, 3).is_ok());
        assert!(stage_plan(1.0, 1e-9, 4, 3, 3).is_err());
        assert!(stage_plan(1.0, 1e-9, 1, 1, 0).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_labelled() {
        let a: Vec<u64> = (0..4).map({
            let mut r = RngStream::new(7, "one-way");
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = RngStream::new(7, "one-way");
            move |_| r.next_u64()
        }).collect();
        let c = RngStream::new(7, "two-way").next_u64();
        assert_eq!(a, b);
        assert_ne!(a[0], c);
        assert_eq!(RngStream::new(1, "x").child("y").label(), "x/y");
    }

    #[test]
    fn gaussian_tiny_scale_and_determinism() {
        let v = [1.0, -2.0, 3.5];
        let out = gaussian_mechanism(&v, 1e-300, &mut RngStream::new(1, "g")).unwrap();
        assert_eq!(out, v);
        let x = gaussian_mechanism(&v, 2.0, &mut RngStream::new(9, "g")).unwrap();
        let y = gaussian_mechanism(&v, 2.0, &mut RngStream::new(9, "g")).unwrap();
        assert_eq!(x, y);
        assert!(gaussian_mechanism(&v, 0.0, &mut RngStream::new(9, "g")).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let p = selection_probabilities(&[3.0, 3.0, 3.0, 3.0], 1.0, 1.0).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        // exp(2·ln3/2) = 3 ⇒ {1, 3}/4.
        let p = selection_probabilities(&[0.0, 3f64.ln()], 2.0, 1.0).unwrap();
        assert_relative_eq!(p[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.75, max_relative = 1e-12);
        let p = selection_probabilities(&[1.0, 5.0, 5.0], f64::INFINITY, 2.0).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn huge_eps_picks_unique_maximizer() {
        let mut rng = RngStream::new(3, "em");
        let cands = [0usize, 1, 2];
        for _ in 0..10_000 {
            let c = exponential_mechanism(&cands, &[0.2, 0.9, 0.5], 1e6, 2.0, &mut rng).unwrap();
            assert_eq!(c, 1);
        }
    }

    #[test]
    fn selection_errors() {
        let mut rng = RngStream::new(3, "em");
        let empty: [usize; 0] = [];
        assert!(matches!(
            exponential_mechanism(&empty, &[], 1.0, 1.0, &mut rng),
            Err(Error::Selection(_))
        ));
        assert!(exponential_mechanism(&[1], &[0.0], 1.0, 0.0, &mut rng).is_err());
        assert!(exponential_mechanism(&[1], &[0.0], -1.0, 1.0, &mut rng).is_err());
        assert!(exponential_mechanism(&[1, 2], &[0.0], 1.0, 1.0, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn accounting_round_trip(eps in 1e-3f64..50.0, log_delta in -20.0f64..-1.0) {
            let delta = 10f64.powf(log_delta);
            let rho = zcdp_from_eps_delta(eps, delta).unwrap();
            prop_assert!((eps_from_zcdp(rho, delta).unwrap() - eps).abs() < 1e-9);
            let b = PrivacyBudget::plan(eps, delta, 5).unwrap();
            prop_assert_eq!(b.rho_stage + b.rho_stage + b.rho_stage, b.rho);
            prop_assert_eq!(3.0 * b.rho_stage, b.rho);
            prop_assert!(b.rho <= rho && (rho - b.rho) <= 4.0 * f64::EPSILON * rho);
        }

        #[test]
        fn integer_shift_leaves_probabilities_unchanged(
            scores in proptest::collection::vec(-50i32..50, 1..8), shift in -1000i32..1000,
        ) {
            let a: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let b: Vec<f64> = scores.iter().map(|&s| (s + shift) as f64).collect();
            prop_assert_eq!(
                selection_probabilities(&a, 0.7, 2.0).unwrap(),
                selection_probabilities(&b, 0.7, 2.0).unwrap()
            );
        }

        #[test]
        fn real_shift_changes_probabilities_by_rounding_only(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..8), shift in -100.0f64..100.0,
        ) {
            let b: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let p = selection_probabilities(&scores, 3.0, 1.0).unwrap();
            let q = selection_probabilities(&b, 3.0, 1.0).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
