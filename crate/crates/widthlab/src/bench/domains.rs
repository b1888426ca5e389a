//! Two synthetic token languages with disjoint dominant vocabulary ranges.
//!
//! Domain A occupies the low end of the token space and domain B the high
//! end, sharing a configurable sliver in the middle. Each domain is a
//! first-order Markov chain whose transition rows are Dirichlet draws with a
//! small concentration, so sequences are strongly predictable within a
//! domain and nearly unpredictable across domains. Domain A stands in for
//! the pretraining distribution and domain B for the continual-training one.

use super::{BenchError, Result};
use crate::numerics::init_rng;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    /// Size of the shared token space the two ranges are carved from.
    pub vocab: usize,
    /// Tokens per domain.
    pub range: usize,
    /// Fraction of each range shared between the domains.
    pub overlap: f64,
    /// Dirichlet concentration of the transition rows; small values make
    /// each token's successor distribution peaky.
    pub alpha: f64,
    pub seq_len: usize,
    pub n_train_a: usize,
    pub n_train_b: usize,
    /// Held-out sequences per domain, used for forget and learn perplexity.
    pub n_heldout: usize,
    pub seed: u64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            vocab: 256,
            range: 120,
            overlap: 0.1,
            alpha: 0.05,
            seq_len: 32,
            n_train_a: 400,
            n_train_b: 400,
            n_heldout: 60,
            seed: 0,
        }
    }
}

impl DomainConfig {
    fn validate(&self) -> Result<()> {
        if self.range < 2 || self.seq_len < 2 {
            return Err(BenchError::InvalidConfig(
                "need range >= 2 and seq_len >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(BenchError::InvalidConfig(format!(
                "overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(BenchError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        let shared = self.overlap_tokens();
        if 2 * self.range - shared > self.vocab {
            return Err(BenchError::InvalidConfig(format!(
                "two ranges of {} tokens with {} shared need {} vocabulary slots, got {}",
                self.range,
                shared,
                2 * self.range - shared,
                self.vocab
            )));
        }
        if self.n_train_a == 0 || self.n_train_b == 0 || self.n_heldout == 0 {
            return Err(BenchError::InvalidConfig(
                "need at least one sequence per corpus".into(),
            ));
        }
        Ok(())
    }

    pub fn overlap_tokens(&self) -> usize {
        (self.range as f64 * self.overlap).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct DomainCorpora {
    pub config: DomainConfig,
    /// Half-open token ranges of the two domains.
    pub range_a: (usize, usize),
    pub range_b: (usize, usize),
    pub train_a: Vec<Vec<usize>>,
    pub train_b: Vec<Vec<usize>>,
    pub heldout_a: Vec<Vec<usize>>,
    pub heldout_b: Vec<Vec<usize>>,
}

/// One domain's sampler: a dense transition table over its range.
struct Chain {
    start: usize,
    rows: Vec<WeightedIndex<f64>>,
}

impl Chain {
    fn build(start: usize, range: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| BenchError::InvalidConfig(format!("dirichlet concentration: {e}")))?;
        let rows = (0..range)
            .map(|_| {
                // Dirichlet draw via normalized gammas. Weights only need to
                // be proportional, so the normalization is left implicit.
                let mut w: Vec<f64> = (0..range).map(|_| gamma.sample(rng)).collect();
                // Gamma with tiny shape can underflow to zero; keep every
                // successor reachable so rows never become degenerate.
                for v in w.iter_mut() {
                    *v += 1e-12;
                }
                WeightedIndex::new(&w)
                    .map_err(|e| BenchError::InvalidConfig(format!("transition row: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Chain { start, rows })
    }

    fn sample(&self, seq_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut seq = Vec::with_capacity(seq_len);
        let mut local = rng.gen_range(0..self.rows.len());
        seq.push(self.start + local);
        for _ in 1..seq_len {
            local = self.rows[local].sample(rng);
            seq.push(self.start + local);
        }
        seq
    }
}

/// Builds both domains and samples their train and held-out corpora.
pub fn gen_domain_corpora(config: &DomainConfig) -> Result<DomainCorpora> {
    config.validate()?;
    let shared = config.overlap_tokens();
    let range_a = (0, config.range);
    let range_b = (config.range - shared, 2 * config.range - shared);

    let mut rng = init_rng(config.seed);
    let chain_a = Chain::build(range_a.0, config.range, config.alpha, &mut rng)?;
    let chain_b = Chain::build(range_b.0, config.range, config.alpha, &mut rng)?;

    let draw = |chain: &Chain, n: usize, rng: &mut ChaCha8Rng| {
        (0..n).map(|_| chain.sample(config.seq_len, rng)).collect::<Vec<_>>()
    };
    let train_a = draw(&chain_a, config.n_train_a, &mut rng);
    let heldout_a = draw(&chain_a, config.n_heldout, &mut rng);
    let train_b = draw(&chain_b, config.n_train_b, &mut rng);
    let heldout_b = draw(&chain_b, config.n_heldout, &mut rng);

    Ok(DomainCorpora {
        config: config.clone(),
        range_a,
        range_b,
        train_a,
        train_b,
        heldout_a,
        heldout_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic_and_disjoint_up_to_the_overlap() {
        let cfg = DomainConfig {
            n_train_a: 20,
            n_train_b: 20,
            n_heldout: 5,
            ..DomainConfig::default()
        };
        let a = gen_domain_corpora(&cfg).unwrap();
        let b = gen_domain_corpora(&cfg).unwrap();
        assert_eq!(a.train_a, b.train_a);
        assert_eq!(a.heldout_b, b.heldout_b);

        assert_eq!(a.range_a, (0, 120));
        assert_eq!(a.range_b, (108, 228));
        assert_eq!(cfg.overlap_tokens(), 12);

        for seq in a.train_a.iter().chain(&a.heldout_a) {
            assert_eq!(seq.len(), cfg.seq_len);
            assert!(seq.iter().all(|&t| t < 120));
        }
        for seq in a.train_b.iter().chain(&a.heldout_b) {
            assert!(seq.iter().all(|&t| (108..228).contains(&t)));
        }
    }

    #[test]
    fn transition_rows_are_peaky_at_small_alpha() {
        let cfg = DomainConfig {
            range: 40,
            n_train_a: 200,
            n_train_b: 1,
            n_heldout: 1,
            seq_len: 24,
            ..DomainConfig::default()
        };
        let corp = gen_domain_corpora(&cfg).unwrap();
        // Count empirical successor diversity: with alpha = 0.05 most of a
        // row's mass sits on a couple of tokens, so repeated contexts reuse
        // successors far more often than a uniform chain would.
        let mut pair_counts = std::collections::HashMap::new();
        let mut context_counts = std::collections::HashMap::new();
        for seq in &corp.train_a {
            for w in seq.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0usize) += 1;
                *context_counts.entry(w[0]).or_insert(0usize) += 1;
            }
        }
        let repeated_mass: usize = pair_counts.values().filter(|&&c| c > 1).sum();
        let total: usize = context_counts.values().sum();
        assert!(
            repeated_mass as f64 > 0.5 * total as f64,
            "successors too diverse: {repeated_mass}/{total}"
        );
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let mut cfg = DomainConfig::default();
        cfg.vocab = 200;
        assert!(matches!(
            gen_domain_corpora(&cfg),
            Err(BenchError::InvalidConfig(_))
        ));
        let mut cfg = DomainConfig::default();
        cfg.overlap = 1.0;
        assert!(matches!(
            gen_domain_corpora(&cfg),
            Err(BenchError::InvalidConfig(_))
        ));
        let mut cfg = DomainConfig::default();
        cfg.alpha = 0.0;
        assert!(matches!(
            gen_domain_corpora(&cfg),
            Err(BenchError::InvalidConfig(_))
        ));
    }
}
