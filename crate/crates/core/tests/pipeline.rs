use nlspan_core::checkpoint;
use nlspan_core::decoder::{cky, hamming, loss_augmented_cky, GoldLabels, ScoreChart};
use nlspan_core::eval::{score_corpus, EvalParams};
use nlspan_core::synthetic::ToyGrammar;
use nlspan_core::training::{fit, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn train_save_load_parse() {
    let corpus = ToyGrammar::new(5, 6).corpus(8);
    let config = TrainConfig { max_epochs: 30, patience: 30, ..TrainConfig::default() };
    let out = fit(&corpus, &corpus, &config).unwrap();
    assert_eq!(out.best().dev.f1, 100.0);

    let restored = checkpoint::load(&checkpoint::save(&out.model)).unwrap();
    let parsed: Vec<_> = corpus.iter().map(|t| restored.parse(&t.tokens()).unwrap()).collect();
    let report = score_corpus(&corpus, &parsed, &EvalParams::default()).unwrap();
    assert_eq!(report.f1, 100.0);
    assert_eq!(report.exact_matches, corpus.len());
}

#[test]
fn augmented_decode_never_scores_below_plain_decode() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 1..=9 {
        let chart = ScoreChart::random(&mut rng, n, 4);
        let gold = cky(&ScoreChart::random(&mut rng, n, 4)).binary;
        let plain = cky(&chart);
        let aug = loss_augmented_cky(&chart, &gold);
        let cost = hamming(&aug.binary, &GoldLabels::new(&gold)) as f64;
        assert!((aug.score - (chart.tree_score(&aug.spans) + cost)).abs() < 1e-9);
        assert!(aug.score >= plain.score - 1e-12);
    }
}
