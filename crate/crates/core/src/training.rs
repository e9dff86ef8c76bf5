//! Losses, gradient accumulation and the training loop.
//!
//! Per sentence the objective is
//! `L = L_cons + pattern_scale * L_pat + consistency_scale * L_reg`:
//! a margin-rescaled structured hinge over trees, the cross-entropy of the
//! gold pattern of every span, and the binary cross-entropy between the
//! consistency head and the sentence's gold consistency matrix. A term whose
//! scale is 0 is not computed and reported as 0.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{span_count, span_index, spans};
use crate::decoder::{hamming, loss_augmented_cky, GoldLabels, IndexedSpan, ScoreChart};
use crate::eval::{score_corpus, EvalError, EvalParams, EvalReport};
use crate::model::{ConsistencyMode, Model, ModelConfig, ModelError, PatternNorm, SentenceForward, Vocabularies};
use crate::numerics::{grad_check, Adam, GradCheckConfig, GradCheckReport, Matrix, NumericsError, Probe, RegionHasher};
use crate::patterns::{
    build_pattern_vocab, gold_consistency, gold_pattern_chart, ConsistencyMatrix, PatternChart, PatternFilter,
};
use crate::treebank::{collapse_unaries, tree_to_spans, Tree};
use crate::vocab::{Vocab, EMPTY_LABEL, UNKNOWN};

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` inside logarithms.
pub const CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyCorpus,
    UnknownLabel(String),
    InvalidConfig(&'static str),
    NonFiniteLoss { epoch: usize },
    Model(ModelError),
    Eval(EvalError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyCorpus => f.write_str("training corpus is empty"),
            TrainError::UnknownLabel(l) => write!(f, "label {l:?} is not in the label vocabulary"),
            TrainError::InvalidConfig(why) => write!(f, "invalid training config: {why}"),
            TrainError::NonFiniteLoss { epoch } => write!(f, "loss became non-finite in epoch {epoch}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}

/// Averaged loss components. `total = cons + pattern_scale * pat +
/// consistency_scale * reg`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cons: f64,
    pub pat: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.cons.is_finite() && self.pat.is_finite() && self.reg.is_finite() && self.total.is_finite()
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.cons += o.cons;
        self.pat += o.pat;
        self.reg += o.reg;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        self.cons *= s;
        self.pat *= s;
        self.reg *= s;
        self.total *= s;
    }
}

/// Which loss terms to compute. Terms whose scale is 0 are always off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub cons: bool,
    pub pat: bool,
    pub reg: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { cons: true, pat: true, reg: true };
    pub const CONS: Terms = Terms { cons: true, pat: false, reg: false };
    pub const PAT: Terms = Terms { cons: false, pat: true, reg: false };
    pub const REG: Terms = Terms { cons: false, pat: false, reg: true };

    fn resolve(self, config: &ModelConfig) -> Terms {
        Terms {
            cons: self.cons,
            pat: self.pat && config.pattern_scale > 0.0,
            reg: self.reg && config.consistency_scale > 0.0,
        }
    }
}

/// A training sentence with its gold targets resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Unary-collapsed.
    pub tree: Tree,
    pub word_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
    pub gold: Vec<IndexedSpan>,
    pub patterns: PatternChart,
    pub consistency: ConsistencyMatrix,
}

impl Example {
    pub fn new(model: &Model, tree: &Tree) -> Result<Self, TrainError> {
        let tree = collapse_unaries(tree);
        let (word_ids, tag_ids) = model.token_ids(&tree.tokens());
        let v = &model.vocabs;
        let gold = tree_to_spans(&tree)
            .into_iter()
            .map(|s| match v.labels.get(&s.label).filter(|&l| l > 0) {
                Some(l) => Ok(IndexedSpan::new(s.start, s.end, l)),
                None => Err(TrainError::UnknownLabel(s.label)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let c = &model.config;
        let patterns = gold_pattern_chart(&tree, &v.patterns, &c.ngrams);
        let consistency = gold_consistency(&tree, &v.labels, &v.patterns, &c.ngrams, c.membership);
        Ok(Example { tree, word_ids, tag_ids, gold, patterns, consistency })
    }

    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// Word, tag, label and pattern vocabularies of a corpus. Words, tags and
/// labels are sorted; unary chains are collapsed before collecting labels.
pub fn build_vocabularies(corpus: &[Tree], config: &ModelConfig, filter: PatternFilter) -> Vocabularies {
    let collapsed: Vec<Tree> = corpus.iter().map(collapse_unaries).collect();
    let mut words = BTreeSet::new();
    let mut tags = BTreeSet::new();
    let mut labels = BTreeSet::new();
    for t in &collapsed {
        for leaf in t.leaves() {
            words.insert(leaf.word.as_str());
            tags.insert(leaf.pos.as_str());
        }
        t.visit(&mut |n| {
            if let Tree::Internal(n) = n {
                labels.insert(n.label.as_str());
            }
        });
    }
    let vocab = |reserved: &str, rest: BTreeSet<&str>| {
        let mut v = Vocab::new(reserved);
        rest.into_iter().for_each(|x| {
            v.insert(x);
        });
        v
    };
    Vocabularies {
        words: vocab(UNKNOWN, words),
        tags: vocab(UNKNOWN, tags),
        labels: vocab(EMPTY_LABEL, labels),
        patterns: build_pattern_vocab(&collapsed, &config.ngrams, filter),
    }
}

/// Structured hinge loss with its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeLoss {
    pub loss: f64,
    /// Non-empty spans of the loss-augmented argmax.
    pub violator: Vec<IndexedSpan>,
    /// `(span, d loss / d score)`, empty when the loss is 0.
    pub grads: Vec<(IndexedSpan, f64)>,
}

/// `max(0, max_T [s(T) + Delta(T, T*)] - s(T*))`, with `Delta` the number of
/// binary brackets labeled differently from gold.
pub fn hinge_loss(chart: &ScoreChart, gold: &[IndexedSpan]) -> HingeLoss {
    let aug = loss_augmented_cky(chart, gold);
    let violator = aug.span_set();
    let mut sorted_gold = gold.to_vec();
    sorted_gold.sort();
    if violator == sorted_gold {
        return HingeLoss { loss: 0.0, violator, grads: Vec::new() };
    }
    let margin =
        chart.tree_score(&aug.binary) + hamming(&aug.binary, &GoldLabels::new(gold)) as f64 - chart.tree_score(gold);
    if margin <= 0.0 {
        return HingeLoss { loss: 0.0, violator, grads: Vec::new() };
    }
    let grads = violator.iter().map(|&s| (s, 1.0)).chain(gold.iter().map(|&s| (s, -1.0))).collect();
    HingeLoss { loss: margin, violator, grads }
}

/// Cross-entropy of the gold pattern of every span and the gradient w.r.t.
/// the pattern logits, in chart span order.
pub fn pattern_loss(log_probs: &[Vec<f64>], gold: &PatternChart, norm: PatternNorm) -> (f64, Vec<Vec<f64>>) {
    let n = gold.sentence_len();
    assert_eq!(log_probs.len(), span_count(n), "one distribution per span");
    let w = match norm {
        PatternNorm::Mean => 1.0 / span_count(n) as f64,
        PatternNorm::Sum => 1.0,
    };
    let mut loss = 0.0;
    let grads = spans(n)
        .zip(log_probs)
        .map(|((i, j), lp)| {
            let y = gold.get(i, j);
            loss -= lp[y];
            let mut g: Vec<f64> = lp.iter().map(|&l| w * libm::exp(l)).collect();
            g[y] -= w;
            g
        })
        .collect();
    (w * loss, grads)
}

/// Cross-entropy between predicted and gold consistency matrices, averaged
/// over entries, and its gradient w.r.t. the logits. Entries whose
/// probability is clipped get zero gradient.
pub fn consistency_loss(probs: &Matrix, gold: &ConsistencyMatrix, mode: ConsistencyMode) -> (f64, Matrix) {
    assert_eq!(probs.shape(), (gold.rows(), gold.cols()), "consistency shapes differ");
    let size = (gold.rows() * gold.cols()).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(gold.rows(), gold.cols());
    for r in 0..gold.rows() {
        for c in 0..gold.cols() {
            let p = probs.get(r, c);
            let y = if gold.get(r, c) { 1.0 } else { 0.0 };
            let q = p.clamp(CLIP, 1.0 - CLIP);
            let clipped = q != p;
            let (l, g) = match mode {
                ConsistencyMode::Full => (-(y * libm::log(q) + (1.0 - y) * libm::log(1.0 - q)), p - y),
                ConsistencyMode::PositiveOnly => (-y * libm::log(q), -y * (1.0 - p)),
            };
            loss += l;
            if !clipped {
                grad.set(r, c, g / size);
            }
        }
    }
    (loss / size, grad)
}

/// Forward pass plus loss gradients w.r.t. the model outputs.
struct Evaluation {
    breakdown: LossBreakdown,
    forward: SentenceForward,
    score_grads: Vec<Vec<f64>>,
    pattern_grads: Vec<Vec<f64>>,
    consistency: Option<(crate::model::ConsistencyForward, Matrix)>,
    region: u64,
}

fn evaluate(model: &Model, ex: &Example, terms: Terms) -> Result<Evaluation, TrainError> {
    let c = &model.config;
    let terms = terms.resolve(c);
    let forward = model.forward_ids(&ex.word_ids, &ex.tag_ids, terms.pat)?;
    let n = ex.len();
    let mut region = RegionHasher::default();
    forward.write_region(&mut region);
    let mut b = LossBreakdown::default();

    let mut score_grads = Vec::new();
    if terms.cons {
        let h = hinge_loss(&forward.chart, &ex.gold);
        region.write_u64(h.grads.is_empty() as u64);
        for s in &h.violator {
            region.write_u64(span_index(n, s.start, s.end) as u64);
            region.write_u64(s.label as u64);
        }
        b.cons = h.loss;
        if !h.grads.is_empty() {
            score_grads = vec![Vec::new(); span_count(n)];
            let k = model.vocabs.num_labels();
            for (s, g) in h.grads {
                let row = &mut score_grads[span_index(n, s.start, s.end)];
                if row.is_empty() {
                    *row = vec![0.0; k];
                }
                row[s.label - 1] += g;
            }
        }
    }

    let mut pattern_grads = Vec::new();
    if terms.pat {
        let lp: Vec<Vec<f64>> = forward.spans.iter().map(|s| s.pattern_log_probs.clone()).collect();
        let (loss, mut grads) = pattern_loss(&lp, &ex.patterns, c.pattern_norm);
        grads.iter_mut().flatten().for_each(|g| *g *= c.pattern_scale);
        b.pat = loss;
        pattern_grads = grads;
    }

    let mut consistency = None;
    if terms.reg {
        let cf = model.consistency_forward()?;
        let (loss, mut grad) = consistency_loss(&cf.probs, &ex.consistency, c.consistency_mode);
        for p in cf.probs.data() {
            region.write_u64((*p < CLIP || *p > 1.0 - CLIP) as u64);
        }
        grad.data_mut().iter_mut().for_each(|g| *g *= c.consistency_scale);
        b.reg = loss;
        consistency = Some((cf, grad));
    }

    b.total = b.cons + c.pattern_scale * b.pat + c.consistency_scale * b.reg;
    Ok(Evaluation { breakdown: b, forward, score_grads, pattern_grads, consistency, region: region.finish() })
}

/// Loss of one sentence without touching gradients.
pub fn total_loss(model: &Model, ex: &Example, terms: Terms) -> Result<LossBreakdown, TrainError> {
    Ok(evaluate(model, ex, terms)?.breakdown)
}

/// Adds the gradient of one sentence's loss to the model's gradient buffers.
pub fn accumulate_gradients(model: &mut Model, ex: &Example, terms: Terms) -> Result<(LossBreakdown, u64), TrainError> {
    let ev = evaluate(model, ex, terms)?;
    if !ev.score_grads.is_empty() || !ev.pattern_grads.is_empty() {
        model.backward(&ev.forward, &ev.score_grads, &ev.pattern_grads)?;
    }
    if let Some((cf, grad)) = &ev.consistency {
        model.consistency_backward(cf, grad)?;
    }
    Ok((ev.breakdown, ev.region))
}

/// Finite-difference check of [`accumulate_gradients`] on one sentence.
pub fn check_gradients(
    model: &mut Model,
    ex: &Example,
    terms: Terms,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, TrainError> {
    let mut store = core::mem::take(&mut model.store);
    let report = grad_check(
        &mut store,
        |s| {
            core::mem::swap(&mut model.store, s);
            let probe = match accumulate_gradients(model, ex, terms) {
                Ok((b, region)) => Probe { loss: b.total, region },
                Err(_) => Probe { loss: f64::NAN, region: 0 },
            };
            core::mem::swap(&mut model.store, s);
            probe
        },
        cfg,
    );
    model.store = store;
    Ok(report?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev F1 improvement.
    pub patience: usize,
    pub learning_rate: f64,
    /// Shuffling seed.
    pub seed: u64,
    pub pattern_filter: PatternFilter,
    pub eval: EvalParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            max_epochs: 100,
            patience: 60,
            learning_rate: 2e-3,
            seed: 1,
            pattern_filter: PatternFilter::ptb(),
            eval: EvalParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be at least 1"));
        }
        if self.patience == 0 {
            return Err(TrainError::InvalidConfig("patience must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over training sentences.
    pub loss: LossBreakdown,
    pub dev: EvalReport,
    pub best: bool,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tL_cons\tL_pat\tL_reg\tL_total\tdev_LP\tdev_LR\tdev_F1\tbest";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.2}\t{:.2}\t{:.2}\t{}",
            self.epoch,
            l.cons,
            l.pat,
            l.reg,
            l.total,
            self.dev.precision,
            self.dev.recall,
            self.dev.f1,
            if self.best { "*" } else { "" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best dev F1.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl FitOutcome {
    pub fn best(&self) -> &EpochLog {
        &self.log[self.best_epoch - 1]
    }
}

/// Parses every tree's tokens and scores against the trees.
pub fn evaluate_corpus(model: &Model, gold: &[Tree], params: &EvalParams) -> Result<EvalReport, TrainError> {
    let pred = gold.iter().map(|t| model.parse(&t.tokens())).collect::<Result<Vec<_>, _>>()?;
    Ok(score_corpus(gold, &pred, params)?)
}

pub fn fit(train: &[Tree], dev: &[Tree], config: &TrainConfig) -> Result<FitOutcome, TrainError> {
    fit_with(train, dev, config, |_| {})
}

/// Trains with per-sentence Adam updates, evaluating on `dev` after every
/// epoch. `on_epoch` sees each log line as soon as it is produced.
pub fn fit_with(
    train: &[Tree],
    dev: &[Tree],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let vocabs = build_vocabularies(train, &config.model, config.pattern_filter);
    let mut model = Model::new(config.model.clone(), vocabs)?;
    let examples = train.iter().map(|t| Example::new(&model, t)).collect::<Result<Vec<_>, _>>()?;
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut best: Option<(f64, Model)> = None;
    let mut best_epoch = 0;
    let mut log = Vec::new();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for &k in &order {
            let (b, _) = accumulate_gradients(&mut model, &examples[k], Terms::ALL)?;
            if !b.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            sum.add(&b);
            adam.step(&mut model.store);
        }
        sum.scale(1.0 / examples.len() as f64);

        let report = evaluate_corpus(&model, dev, &config.eval)?;
        let improved = best.as_ref().is_none_or(|(f, _)| report.f1 > *f);
        if improved {
            best = Some((report.f1, model.clone()));
            best_epoch = epoch;
        }
        let line = EpochLog { epoch, loss: sum, dev: report, best: improved };
        on_epoch(&line);
        log.push(line);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok(FitOutcome { model, log, best_epoch })
}
