//! Built-in verification: CKY against exhaustive search on random charts,
//! and finite-difference checks of every loss term.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{brute_force_best, cky, ScoreChart};
use crate::model::{Model, ModelConfig};
use crate::numerics::GradCheckConfig;
use crate::patterns::{NGramSet, PatternFilter};
use crate::synthetic::ToyGrammar;
use crate::training::{build_vocabularies, check_gradients, Example, Terms};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelftestOptions {
    pub max_len: usize,
    pub seeds: u64,
    pub labels: usize,
    /// Test-only: break the pattern head's backward pass.
    pub corrupt_backward: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { max_len: 7, seeds: 100, labels: 4, corrupt_backward: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest `|cky - brute force|` over `seeds` random charts of length `n`
/// with `labels` labels, and whether every span set matched.
pub fn cky_agreement(n: usize, seeds: u64, labels: usize) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut same = true;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(n as u64));
        let chart = ScoreChart::random(&mut rng, n, labels);
        let fast = cky(&chart);
        let slow = brute_force_best(&chart).expect("n within brute-force limit");
        worst = worst.max((fast.score - slow.score).abs());
        same &= fast.spans == slow.spans && fast.binary == slow.binary;
    }
    (worst, same)
}

/// Small model and a 5-token sentence for gradient checks.
pub fn gradient_fixture() -> (Model, Example) {
    let corpus = ToyGrammar::new(77, 8).corpus(12);
    let config = ModelConfig {
        word_dim: 4,
        pos_dim: 3,
        hidden_dim: 8,
        ngrams: NGramSet::new(&[2, 3]).expect("valid sizes"),
        ..ModelConfig::default()
    };
    let vocabs = build_vocabularies(&corpus, &config, PatternFilter::NONE);
    let model = Model::new(config, vocabs).expect("valid config");
    let tree = corpus.iter().find(|t| t.len() == 5).expect("toy corpus has a 5-token sentence");
    let ex = Example::new(&model, tree).expect("labels come from the corpus");
    (model, ex)
}

pub fn run(options: SelftestOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for n in 1..=options.max_len {
        let (worst, same) = cky_agreement(n, options.seeds, options.labels);
        out.push(CheckOutcome {
            name: format!("cky = brute force, n = {n}"),
            passed: worst <= 1e-9 && same,
            detail: format!(
                "{} charts, max |diff| {worst:.1e}, spans {}",
                options.seeds,
                if same { "identical" } else { "differ" }
            ),
        });
    }

    let (mut model, ex) = gradient_fixture();
    model.corrupt_backward = options.corrupt_backward;
    let cfg = GradCheckConfig::default();
    for (name, terms) in [
        ("gradient: structured hinge", Terms::CONS),
        ("gradient: pattern loss", Terms::PAT),
        ("gradient: consistency loss", Terms::REG),
        ("gradient: total loss", Terms::ALL),
    ] {
        let outcome = match check_gradients(&mut model, &ex, terms, cfg) {
            Ok(r) => CheckOutcome {
                name: String::from(name),
                passed: r.passed() && r.checked() > 0,
                detail: format!(
                    "{} entries, {} skipped at kinks, max rel err {:.1e}",
                    r.checked(),
                    r.skipped(),
                    r.max_rel_error()
                ),
            },
            Err(e) => CheckOutcome { name: String::from(name), passed: false, detail: format!("{e}") },
        };
        out.push(outcome);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let a = run(SelftestOptions { seeds: 10, ..SelftestOptions::default() });
        assert!(a.iter().all(|c| c.passed), "{a:?}");
        assert_eq!(a, run(SelftestOptions { seeds: 10, ..SelftestOptions::default() }));
    }

    #[test]
    fn corrupted_backward_fails() {
        let r = run(SelftestOptions { seeds: 1, corrupt_backward: true, ..SelftestOptions::default() });
        let failed: Vec<&str> = r.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["gradient: pattern loss", "gradient: total loss"]);
    }
}
