//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nlspan::cli::cmd_train;
use nlspan::treebank_io::read_treebank;
use nlspan_core::decoder::{brute_force_best, cky, ScoreChart};
use nlspan_core::eval::{f1_by_min_span_length, score_corpus, EvalParams};
use nlspan_core::model::{Model, ModelConfig, ModelError};
use nlspan_core::numerics::{GradCheckConfig, Matrix};
use nlspan_core::patterns::{extract_patterns, gold_consistency, Membership, NGramSet, PatternFilter};
use nlspan_core::selftest::gradient_fixture;
use nlspan_core::training::{
    build_vocabularies, check_gradients, fit, hinge_loss, total_loss, Example, Terms, TrainConfig,
};
use nlspan_core::treebank::{collapse_unaries, Tree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn trees(name: &str) -> Vec<Tree> {
    read_treebank(&fixture(name)).expect("fixture parses")
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn decoder_optimality() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    let mut charts = 0;
    for n in 2..=7 {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + n as u64);
            let chart = ScoreChart::random(&mut rng, n, 5);
            let fast = cky(&chart);
            let slow = brute_force_best(&chart).expect("n <= 7");
            worst = worst.max((fast.score - slow.score).abs());
            if fast.spans != slow.spans || fast.binary != slow.binary {
                mismatched += 1;
            }
            charts += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && mismatched == 0 && elapsed < Duration::from_secs(30),
        format!("{charts} charts, max |cky - brute| = {worst:.1e}, {mismatched} span-set mismatches, {elapsed:.2?}"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (mut model, ex) = gradient_fixture();
    let mut parts = Vec::new();
    let mut passed = ex.len() == 5;
    for (name, terms) in [
        ("pattern", Terms::PAT),
        ("consistency", Terms::REG),
        ("pattern+consistency", Terms { cons: false, pat: true, reg: true }),
        ("hinge", Terms::CONS),
        ("total", Terms::ALL),
    ] {
        match check_gradients(&mut model, &ex, terms, GradCheckConfig::default()) {
            Ok(r) => {
                passed &= r.passed() && r.max_rel_error() < 1e-4 && r.checked() > 0;
                parts.push(format!(
                    "{name} {:.1e} ({} entries, {} skipped)",
                    r.max_rel_error(),
                    r.checked(),
                    r.skipped()
                ));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{name} error {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(60);
    outcome(passed, format!("{}-token sentence: {}; {elapsed:.2?}", ex.len(), parts.join(", ")))
}

fn pattern_fixture() -> Outcome {
    let tree = collapse_unaries(&trees("saw_dog.trees")[0]);
    let tri: BTreeSet<(usize, usize, String)> =
        extract_patterns(&tree, &NGramSet::single(3).unwrap()).iter().map(|p| (p.start, p.end, p.label())).collect();
    let bi: BTreeSet<(usize, usize, String)> =
        extract_patterns(&tree, &NGramSet::single(2).unwrap()).iter().map(|p| (p.start, p.end, p.label())).collect();
    // every 3-child node of the tree: the root, the subject NP and the VP
    let expected_tri: BTreeSet<_> = [(0, 3, "DT JJ NN"), (3, 11, "VBD NP PP"), (0, 12, "NP VP .")]
        .into_iter()
        .map(|(i, j, l)| (i, j, l.to_string()))
        .collect();
    let has_vp = tri.contains(&(3, 11, "VBD NP PP".to_string()));
    let has_np = bi.contains(&(7, 11, "NP PP".to_string()));

    let ngrams = NGramSet::single(2).unwrap();
    let labels = build_vocabularies(std::slice::from_ref(&tree), &ModelConfig::default(), PatternFilter::NONE).labels;
    let patterns = build_vocabularies(
        std::slice::from_ref(&tree),
        &ModelConfig { ngrams: ngrams.clone(), ..ModelConfig::default() },
        PatternFilter::NONE,
    )
    .patterns;
    let y = gold_consistency(&tree, &labels, &patterns, &ngrams, Membership::DirectElement);
    let np_pp = patterns.get("NP PP").expect("NP PP pattern");
    let row = |l: &str| labels.get(l).expect("label") - 1;
    let marked = y.get(row("NP"), np_pp) && y.get(row("PP"), np_pp);
    let others: Vec<&str> = labels.labels()[1..]
        .iter()
        .filter(|l| !["NP", "PP"].contains(&l.as_str()) && y.get(labels.get(l).unwrap() - 1, np_pp))
        .map(String::as_str)
        .collect();
    outcome(
        has_vp && has_np && tri == expected_tri && marked && others.is_empty(),
        format!(
            "n=3 instances {:?}; (7,11,NP PP) {}; consistency NP/PP with NP PP: {marked}, other labels: {others:?}",
            tri.iter().map(|(i, j, l)| format!("({i},{j},{l})")).collect::<Vec<_>>(),
            if has_np { "found" } else { "missing" },
        ),
    )
}

fn memorization() -> Outcome {
    let corpus = trees("synthetic20.trees");
    let words: BTreeSet<&str> = corpus.iter().flat_map(|t| t.words()).collect();
    let longest = corpus.iter().map(Tree::len).max().unwrap_or(0);
    let start = Instant::now();
    let config = TrainConfig { max_epochs: 200, ..TrainConfig::default() };
    let out = match fit(&corpus, &corpus, &config) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let elapsed = start.elapsed();
    let first_perfect = out.log.iter().find(|l| l.dev.f1 == 100.0).map(|l| l.epoch);
    let first_zero = out.log.iter().find(|l| l.loss.cons == 0.0).map(|l| l.epoch);
    let finite = out.log.iter().all(|l| l.loss.is_finite());
    outcome(
        corpus.len() == 20
            && words.len() <= 50
            && longest <= 8
            && first_perfect.is_some()
            && first_zero.is_some()
            && finite
            && elapsed < Duration::from_secs(300),
        format!(
            "{} trees, {} words, <= {longest} tokens; 100 F1 first at epoch {first_perfect:?}, L_cons = 0 first at epoch {first_zero:?}, losses finite: {finite}, {} epochs in {elapsed:.2?}",
            corpus.len(),
            words.len(),
            out.log.len()
        ),
    )
}

fn ablation_wiring() -> Outcome {
    let corpus = trees("synthetic20.trees");
    let mut passed = true;
    let mut notes = Vec::new();

    // consistency_scale = 0: reg contributes nothing, total = hinge + pattern loss
    let no_reg = ModelConfig { consistency_scale: 0.0, ..ModelConfig::default() };
    let config = TrainConfig { model: no_reg.clone(), max_epochs: 5, ..TrainConfig::default() };
    match fit(&corpus, &corpus, &config) {
        Ok(out) => {
            let ok = out.log.iter().all(|l| l.loss.reg == 0.0 && l.loss.pat > 0.0);
            passed &= ok;
            notes.push(format!("log reg column zero in all {} epochs: {ok}", out.log.len()));
        }
        Err(e) => {
            passed = false;
            notes.push(format!("training failed: {e}"));
        }
    }
    let vocabs = build_vocabularies(&corpus, &no_reg, PatternFilter::ptb());
    let model = Model::new(no_reg, vocabs.clone()).unwrap();
    let mut exact = true;
    for t in &corpus {
        let ex = Example::new(&model, t).unwrap();
        let b = total_loss(&model, &ex, Terms::ALL).unwrap();
        let pat = total_loss(&model, &ex, Terms::PAT).unwrap().pat;
        let hinge = hinge_loss(&model.forward_ids(&ex.word_ids, &ex.tag_ids, false).unwrap().chart, &ex.gold).loss;
        exact &= b.reg == 0.0 && b.cons == hinge && b.pat == pat && b.total == hinge + pat;
    }
    passed &= exact;
    notes.push(format!("total = hinge + pattern exactly on every sentence: {exact}"));

    // both scales 0: the baseline hinge alone
    let baseline = ModelConfig { consistency_scale: 0.0, pattern_scale: 0.0, ..ModelConfig::default() };
    let model = Model::new(baseline, vocabs).unwrap();
    let mut exact = true;
    for t in &corpus {
        let ex = Example::new(&model, t).unwrap();
        let b = total_loss(&model, &ex, Terms::ALL).unwrap();
        let hinge = hinge_loss(&model.forward_ids(&ex.word_ids, &ex.tag_ids, false).unwrap().chart, &ex.gold).loss;
        exact &= b.pat == 0.0 && b.reg == 0.0 && b.total == hinge;
    }
    passed &= exact;
    notes.push(format!("both scales 0: total = hinge exactly: {exact}"));
    outcome(passed, notes.join("; "))
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn consistency_independent_of_length() -> Outcome {
    // structural: the head's only input is the model itself
    let _: fn(&Model) -> Result<Matrix, ModelError> = Model::consistency_probs;

    let corpus = trees("synthetic20.trees");
    let vocabs = build_vocabularies(&corpus, &ModelConfig::default(), PatternFilter::NONE);
    let model = Model::new(ModelConfig::default(), vocabs).unwrap();
    let sentence = |n: usize| -> Vec<(String, String)> {
        let toks: Vec<(String, String)> = corpus.iter().flat_map(|t| t.tokens()).collect();
        toks.iter().cycle().take(n).cloned().collect()
    };
    let short = sentence(5);
    let long = sentence(50);
    let reference = model.consistency_probs().unwrap();
    let mut same_output = true;
    let (mut t_short, mut t_long, mut f_short, mut f_long) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for round in 0..60 {
        for (toks, heads, spans) in [(&short, &mut t_short, &mut f_short), (&long, &mut t_long, &mut f_long)] {
            let s = Instant::now();
            let fwd = model.forward(toks, true).unwrap();
            spans.push(s.elapsed());
            let s = Instant::now();
            let y = model.consistency_probs().unwrap();
            heads.push(s.elapsed());
            same_output &= y == reference;
            if round == 0 {
                assert!(fwd.chart.sentence_len() == toks.len());
            }
        }
    }
    let (hs, hl) = (median(t_short), median(t_long));
    let (fs, fl) = (median(f_short), median(f_long));
    let ratio = hl.as_secs_f64() / hs.as_secs_f64();
    let span_ratio = fl.as_secs_f64() / fs.as_secs_f64();
    outcome(
        same_output && (0.5..=2.0).contains(&ratio) && span_ratio > 10.0,
        format!(
            "consistency head median {hs:.2?} at n=5 vs {hl:.2?} at n=50 (ratio {ratio:.2}), output identical: {same_output}; span heads {fs:.2?} vs {fl:.2?} (ratio {span_ratio:.0})"
        ),
    )
}

fn evaluation_correctness() -> Outcome {
    let params = EvalParams::default();
    let mut notes = Vec::new();
    let mut passed = true;
    for name in ["messy10.trees", "synthetic20.trees", "saw_dog.trees", "eval_gold.trees", "eval_pred.trees"] {
        let t = trees(name);
        let r = score_corpus(&t, &t, &params).unwrap();
        passed &= format!("{:.2}", r.f1) == "100.00";
        notes.push(format!("{name} {:.2}", r.f1));
    }
    let gold = trees("eval_gold.trees");
    let pred = trees("eval_pred.trees");
    let r = score_corpus(&gold, &pred, &params).unwrap();
    let hand = (format!("{:.2}", r.precision), format!("{:.2}", r.recall), format!("{:.2}", r.f1));
    passed &= hand == ("100.00".to_string(), "50.00".to_string(), "66.67".to_string());
    notes.push(format!("fixture pair LP {} LR {} F1 {}", hand.0, hand.1, hand.2));

    // threshold 1 against overall F1 on an imperfect prediction
    let synth = trees("synthetic20.trees");
    let flat: Vec<Tree> = synth
        .iter()
        .map(|t| Tree::internal("S", t.leaves().iter().map(|l| Tree::leaf(l.pos.clone(), l.word.clone())).collect()))
        .collect();
    for (g, p) in [(&gold, &pred), (&synth, &flat)] {
        let overall = score_corpus(g, p, &params).unwrap();
        let rows = f1_by_min_span_length(g, p, &[1], &params).unwrap();
        passed &= rows[0].f1 == Some(overall.f1);
        notes.push(format!("threshold 1 {:.4} = overall {:.4}", rows[0].f1.unwrap_or(f64::NAN), overall.f1));
    }
    outcome(passed, notes.join("; "))
}

fn determinism() -> Outcome {
    let corpus = fixture("synthetic20.trees");
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = dir.path().join("run.cfg");
        let text = format!(
            "train_path = {c}\ndev_path = {c}\ncheckpoint_path = model.ckpt\nseed = 7\nmax_epochs = 200\n",
            c = corpus.display()
        );
        fs::write(&cfg, text).map_err(|e| e.to_string())?;
        cmd_train(&cfg, true, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let log = fs::read(dir.path().join("model.ckpt.log")).map_err(|e| e.to_string())?;
        let ckpt = fs::read(dir.path().join("model.ckpt")).map_err(|e| e.to_string())?;
        Ok((log, ckpt))
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!(
                "log {} bytes ({} lines) identical: {}; checkpoint {} bytes identical: {}",
                a.0.len(),
                a.0.iter().filter(|&&c| c == b'\n').count(),
                a.0 == b.0,
                a.1.len(),
                a.1 == b.1
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("train failed: {e}")),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("decoder optimality", decoder_optimality),
        ("gradient correctness", gradient_correctness),
        ("pattern extraction fixture", pattern_fixture),
        ("memorization", memorization),
        ("ablation wiring", ablation_wiring),
        ("consistency head independent of sentence length", consistency_independent_of_length),
        ("evaluation correctness", evaluation_correctness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        if !r.passed {
            failed += 1;
        }
        println!("criterion {} {}: {} ({})", k + 1, if r.passed { "PASS" } else { "FAIL" }, name, r.detail);
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
