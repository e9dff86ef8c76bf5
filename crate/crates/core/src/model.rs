//! The scoring model.
//!
//! A bidirectional tanh recurrence over word and POS embeddings produces one
//! state per fencepost, `h_t = [f_t ; b_{t+1}]`, where `f_t` has read tokens
//! `1..=t` left to right and `b_{t+1}` has read tokens `t+1..=n` right to
//! left (`f_0 = b_{n+1} = 0`). A span `(i, j)` is represented by
//! `v = h_j - h_i`, so representations telescope: `v(i,k) + v(k,j) = v(i,j)`.
//!
//! Three heads read the span representations:
//!
//! * constituent scores `W2c relu(W1c v + b1c) + b2c`, one per real label
//!   (the empty label scores 0 and has no row);
//! * pattern probabilities `softmax(W2p relu(W1p v + b1p) + b2p)` over the
//!   pattern vocabulary, including the no-pattern class;
//! * a consistency matrix `sigmoid(W2c U W2p^T)` between constituent and
//!   pattern labels.
//!
//! The consistency head reuses the two output matrices `W2c`, `W2p` as label
//! embeddings and only adds the `|H| x |H|` matrix `U`. It never looks at a
//! span, so its cost is `O(|Lc| |H|^2 + |Lc| |Lp| |H|)` per step regardless of
//! sentence length. A per-span variant `sigmoid((W2c U1 V)(V^T U2 W2p))` over
//! the `|H| x n^2` matrix `V` of all span representations would cost
//! `O((|Lp| + |Lc|)(|H|^2 + n^2 |H|) + |Lp| |Lc| n^2)` per sentence and is not
//! provided.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{span_count, spans};
use crate::decoder::{cky, DecodedTree, ScoreChart};
use crate::numerics::{
    affine, affine_backward, axpy, log_softmax, relu, relu_backward, sigmoid_scalar, tanh, tanh_backward, Matrix,
    NumericsError, ParamId, ParameterStore, RegionHasher,
};
use crate::patterns::{Membership, NGramSet, PatternVocab};
use crate::treebank::{expand_unaries, spans_to_tree, LabeledSpan, SpansError, Tree};
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    EmptySentence,
    SpanOutOfRange { start: usize, end: usize, len: usize },
    InvalidConfig(&'static str),
    Numerics(NumericsError),
    Spans(SpansError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::EmptySentence => f.write_str("empty sentence"),
            ModelError::SpanOutOfRange { start, end, len } => {
                write!(f, "span ({start}, {end}) out of range for sentence of length {len}")
            }
            ModelError::InvalidConfig(why) => write!(f, "invalid model config: {why}"),
            ModelError::Numerics(e) => write!(f, "{e}"),
            ModelError::Spans(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<NumericsError> for ModelError {
    fn from(e: NumericsError) -> Self {
        ModelError::Numerics(e)
    }
}

impl From<SpansError> for ModelError {
    fn from(e: SpansError) -> Self {
        ModelError::Spans(e)
    }
}

/// How the per-span pattern cross-entropies are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatternNorm {
    /// Averaged over the `n (n + 1) / 2` spans.
    #[default]
    Mean,
    /// Summed over spans.
    Sum,
}

/// Which terms the consistency cross-entropy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsistencyMode {
    /// Binary cross-entropy over every entry, averaged.
    #[default]
    Full,
    /// Only the `-y log y_hat` terms, averaged. Minimized by predicting all
    /// ones, so useful only for comparison.
    PositiveOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    /// `|H|`: fencepost size and MLP width of both span heads. Must be even.
    pub hidden_dim: usize,
    pub ngrams: NGramSet,
    pub pattern_scale: f64,
    pub consistency_scale: f64,
    pub pattern_norm: PatternNorm,
    pub consistency_mode: ConsistencyMode,
    pub membership: Membership,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 32,
            pos_dim: 16,
            hidden_dim: 64,
            ngrams: NGramSet::single(3).expect("3 is a valid n-gram size"),
            pattern_scale: 1.0,
            consistency_scale: 5.0,
            pattern_norm: PatternNorm::Mean,
            consistency_mode: ConsistencyMode::Full,
            membership: Membership::DirectElement,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.word_dim == 0 || self.pos_dim == 0 {
            return Err(ModelError::InvalidConfig("embedding dimensions must be at least 1"));
        }
        if self.hidden_dim < 2 || !self.hidden_dim.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig("hidden dimension must be even and at least 2"));
        }
        if !(self.pattern_scale >= 0.0 && self.consistency_scale >= 0.0) {
            return Err(ModelError::InvalidConfig("loss scales must be non-negative"));
        }
        Ok(())
    }
}

/// Label sets the model is built over.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    /// Index 0 is the unknown word.
    pub words: Vocab,
    /// Index 0 is the unknown tag.
    pub tags: Vocab,
    /// Index 0 is the empty label.
    pub labels: Vocab,
    pub patterns: PatternVocab,
}

impl Vocabularies {
    /// Number of real constituent labels.
    pub fn num_labels(&self) -> usize {
        self.labels.len() - 1
    }
}

/// Parameter handles. `constituent_out` doubles as the constituent label
/// embedding of the consistency head, `pattern_out` as the pattern one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamIds {
    pub word_embedding: ParamId,
    pub pos_embedding: ParamId,
    pub forward_input: ParamId,
    pub forward_recurrent: ParamId,
    pub forward_bias: ParamId,
    pub backward_input: ParamId,
    pub backward_recurrent: ParamId,
    pub backward_bias: ParamId,
    pub constituent_hidden: ParamId,
    pub constituent_hidden_bias: ParamId,
    pub constituent_out: ParamId,
    pub constituent_out_bias: ParamId,
    pub pattern_hidden: ParamId,
    pub pattern_hidden_bias: ParamId,
    pub pattern_out: ParamId,
    pub pattern_out_bias: ParamId,
    pub consistency: ParamId,
}

impl ParamIds {
    pub const NAMES: [&'static str; 17] = [
        "encoder.word_embedding",
        "encoder.pos_embedding",
        "encoder.forward.input",
        "encoder.forward.recurrent",
        "encoder.forward.bias",
        "encoder.backward.input",
        "encoder.backward.recurrent",
        "encoder.backward.bias",
        "constituent.hidden.weight",
        "constituent.hidden.bias",
        "constituent.label_embedding",
        "constituent.output.bias",
        "pattern.hidden.weight",
        "pattern.hidden.bias",
        "pattern.label_embedding",
        "pattern.output.bias",
        "consistency.bilinear",
    ];

    pub fn resolve(store: &ParameterStore) -> Result<Self, NumericsError> {
        let id = |k: usize| store.require(Self::NAMES[k]);
        Ok(ParamIds {
            word_embedding: id(0)?,
            pos_embedding: id(1)?,
            forward_input: id(2)?,
            forward_recurrent: id(3)?,
            forward_bias: id(4)?,
            backward_input: id(5)?,
            backward_recurrent: id(6)?,
            backward_bias: id(7)?,
            constituent_hidden: id(8)?,
            constituent_hidden_bias: id(9)?,
            constituent_out: id(10)?,
            constituent_out_bias: id(11)?,
            pattern_hidden: id(12)?,
            pattern_hidden_bias: id(13)?,
            pattern_out: id(14)?,
            pattern_out_bias: id(15)?,
            consistency: id(16)?,
        })
    }

    /// Expected `(rows, cols)` of every parameter, in [`Self::NAMES`] order.
    pub fn shapes(config: &ModelConfig, vocabs: &Vocabularies) -> [(usize, usize); 17] {
        let h = config.hidden_dim;
        let r = h / 2;
        let e = config.word_dim + config.pos_dim;
        let k = vocabs.num_labels();
        let p = vocabs.patterns.len();
        [
            (vocabs.words.len(), config.word_dim),
            (vocabs.tags.len(), config.pos_dim),
            (r, e),
            (r, r),
            (r, 1),
            (r, e),
            (r, r),
            (r, 1),
            (h, h),
            (h, 1),
            (k, h),
            (k, 1),
            (h, h),
            (h, 1),
            (p, h),
            (p, 1),
            (h, h),
        ]
    }
}

/// Fencepost states of one sentence plus what backpropagation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    /// `(n + 1) x |H|`.
    pub fenceposts: Matrix,
    word_ids: Vec<usize>,
    tag_ids: Vec<usize>,
    inputs: Vec<Vec<f64>>,
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// `h_j - h_i`.
pub fn span_rep(encoded: &EncodedSentence, i: usize, j: usize) -> Result<Vec<f64>, ModelError> {
    let n = encoded.len();
    if !(i < j && j <= n) {
        return Err(ModelError::SpanOutOfRange { start: i, end: j, len: n });
    }
    Ok(encoded.fenceposts.row(j).iter().zip(encoded.fenceposts.row(i)).map(|(a, b)| a - b).collect())
}

/// Per-span activations cached by [`Model::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpanActivations {
    pub rep: Vec<f64>,
    pub constituent_pre: Vec<f64>,
    pub constituent_hidden: Vec<f64>,
    /// Empty when the pattern head was skipped.
    pub pattern_pre: Vec<f64>,
    pub pattern_hidden: Vec<f64>,
    pub pattern_log_probs: Vec<f64>,
}

/// All span-level outputs of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceForward {
    pub encoded: EncodedSentence,
    pub chart: ScoreChart,
    /// In [`crate::chart::spans`] order.
    pub spans: Vec<SpanActivations>,
    pub with_patterns: bool,
}

impl SentenceForward {
    /// Feeds every relu on/off decision into `h`.
    pub fn write_region(&self, h: &mut RegionHasher) {
        for s in &self.spans {
            h.write_signs(&s.constituent_pre);
            h.write_signs(&s.pattern_pre);
        }
    }
}

/// Output of the consistency head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyForward {
    /// `W2c U`, `|Lc| x |H|`.
    pub projected: Matrix,
    /// `W2c U W2p^T`, `|Lc| x |Lp|`.
    pub logits: Matrix,
    pub probs: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub store: ParameterStore,
    pub ids: ParamIds,
    /// Test hook: halves the gradient through the pattern head's relu.
    #[doc(hidden)]
    pub corrupt_backward: bool,
}

/// Pre-activation, hidden layer and output of an MLP head.
type HeadTrace = (Vec<f64>, Vec<f64>, Vec<f64>);

impl Model {
    /// Fresh model with Xavier-uniform weights and zero biases.
    pub fn new(config: ModelConfig, vocabs: Vocabularies) -> Result<Self, ModelError> {
        config.validate()?;
        if vocabs.num_labels() == 0 {
            return Err(ModelError::InvalidConfig("need at least one constituent label"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        for (name, (rows, cols)) in ParamIds::NAMES.iter().zip(ParamIds::shapes(&config, &vocabs)) {
            let value =
                if cols == 1 { Matrix::zeros(rows, cols) } else { Matrix::xavier_uniform(rows, cols, &mut rng) };
            store.add(name, value)?;
        }
        let ids = ParamIds::resolve(&store)?;
        Ok(Model { config, vocabs, store, ids, corrupt_backward: false })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(config: ModelConfig, vocabs: Vocabularies, store: ParameterStore) -> Result<Self, ModelError> {
        config.validate()?;
        let ids = ParamIds::resolve(&store)?;
        if store.len() != ParamIds::NAMES.len() {
            return Err(ModelError::InvalidConfig("unexpected parameters in store"));
        }
        for (k, shape) in ParamIds::shapes(&config, &vocabs).into_iter().enumerate() {
            let found = store.value(store.require(ParamIds::NAMES[k])?).shape();
            if found != shape {
                return Err(NumericsError::ShapeMismatch { op: ParamIds::NAMES[k], expected: shape, found }.into());
            }
        }
        Ok(Model { config, vocabs, store, ids, corrupt_backward: false })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Word and tag indices, unknown entries mapped to 0.
    pub fn token_ids(&self, tokens: &[(String, String)]) -> (Vec<usize>, Vec<usize>) {
        tokens.iter().map(|(w, p)| (self.vocabs.words.get_or_reserved(w), self.vocabs.tags.get_or_reserved(p))).unzip()
    }

    pub fn encode(&self, tokens: &[(String, String)]) -> Result<EncodedSentence, ModelError> {
        let (w, t) = self.token_ids(tokens);
        self.encode_ids(&w, &t)
    }

    pub fn encode_ids(&self, word_ids: &[usize], tag_ids: &[usize]) -> Result<EncodedSentence, ModelError> {
        let n = word_ids.len();
        if n == 0 {
            return Err(ModelError::EmptySentence);
        }
        assert_eq!(n, tag_ids.len(), "word and tag sequences differ in length");
        let s = &self.store;
        let ids = &self.ids;
        let r = self.config.hidden_dim / 2;
        let inputs: Vec<Vec<f64>> = word_ids
            .iter()
            .zip(tag_ids)
            .map(|(&w, &t)| {
                let mut e = s.value(ids.word_embedding).row(w).to_vec();
                e.extend_from_slice(s.value(ids.pos_embedding).row(t));
                e
            })
            .collect();

        let mut forward: Vec<Vec<f64>> = Vec::with_capacity(n);
        let zero = vec![0.0; r];
        for (k, e) in inputs.iter().enumerate() {
            let prev = if k == 0 { &zero } else { &forward[k - 1] };
            let mut z = affine(s.value(ids.forward_input), e, s.value(ids.forward_bias).data())?;
            axpy(1.0, &s.value(ids.forward_recurrent).matvec(prev)?, &mut z);
            forward.push(tanh(&z));
        }
        let mut backward: Vec<Vec<f64>> = vec![Vec::new(); n];
        for k in (0..n).rev() {
            let next = if k + 1 == n { &zero } else { &backward[k + 1] };
            let mut z = affine(s.value(ids.backward_input), &inputs[k], s.value(ids.backward_bias).data())?;
            axpy(1.0, &s.value(ids.backward_recurrent).matvec(next)?, &mut z);
            backward[k] = tanh(&z);
        }

        let mut fenceposts = Matrix::zeros(n + 1, 2 * r);
        for t in 0..=n {
            let row = fenceposts.row_mut(t);
            if t > 0 {
                row[..r].copy_from_slice(&forward[t - 1]);
            }
            if t < n {
                row[r..].copy_from_slice(&backward[t]);
            }
        }
        Ok(EncodedSentence {
            fenceposts,
            word_ids: word_ids.to_vec(),
            tag_ids: tag_ids.to_vec(),
            inputs,
            forward,
            backward,
        })
    }

    /// Scores of the real constituent labels for one span representation.
    pub fn constituent_scores(&self, rep: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.constituent_head(rep)?.2)
    }

    fn constituent_head(&self, rep: &[f64]) -> Result<HeadTrace, ModelError> {
        let s = &self.store;
        let pre = affine(s.value(self.ids.constituent_hidden), rep, s.value(self.ids.constituent_hidden_bias).data())?;
        let hidden = relu(&pre);
        let out = affine(s.value(self.ids.constituent_out), &hidden, s.value(self.ids.constituent_out_bias).data())?;
        Ok((pre, hidden, out))
    }

    fn pattern_head(&self, rep: &[f64]) -> Result<HeadTrace, ModelError> {
        let s = &self.store;
        let pre = affine(s.value(self.ids.pattern_hidden), rep, s.value(self.ids.pattern_hidden_bias).data())?;
        let hidden = relu(&pre);
        let logits = affine(s.value(self.ids.pattern_out), &hidden, s.value(self.ids.pattern_out_bias).data())?;
        Ok((pre, hidden, log_softmax(&logits)))
    }

    /// Pattern distribution for one span representation.
    pub fn pattern_probs(&self, rep: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.pattern_head(rep)?.2.into_iter().map(libm::exp).collect())
    }

    /// `sigmoid(W2c U W2p^T)`. Reads parameters only.
    pub fn consistency_probs(&self) -> Result<Matrix, ModelError> {
        Ok(self.consistency_forward()?.probs)
    }

    pub fn consistency_forward(&self) -> Result<ConsistencyForward, ModelError> {
        let s = &self.store;
        let projected = s.value(self.ids.constituent_out).matmul(s.value(self.ids.consistency))?;
        let logits = projected.matmul(&s.value(self.ids.pattern_out).transpose())?;
        let mut probs = logits.clone();
        probs.data_mut().iter_mut().for_each(|x| *x = sigmoid_scalar(*x));
        Ok(ConsistencyForward { projected, logits, probs })
    }

    /// Encodes a sentence and runs the span heads on every span.
    pub fn forward(&self, tokens: &[(String, String)], with_patterns: bool) -> Result<SentenceForward, ModelError> {
        let (w, t) = self.token_ids(tokens);
        self.forward_ids(&w, &t, with_patterns)
    }

    pub fn forward_ids(
        &self,
        word_ids: &[usize],
        tag_ids: &[usize],
        with_patterns: bool,
    ) -> Result<SentenceForward, ModelError> {
        let encoded = self.encode_ids(word_ids, tag_ids)?;
        let n = encoded.len();
        let mut chart = ScoreChart::new(n, self.vocabs.num_labels());
        let mut acts = Vec::with_capacity(span_count(n));
        for (i, j) in spans(n) {
            let rep = span_rep(&encoded, i, j)?;
            let (constituent_pre, constituent_hidden, scores) = self.constituent_head(&rep)?;
            chart.row_mut(i, j).copy_from_slice(&scores);
            let (pattern_pre, pattern_hidden, pattern_log_probs) =
                if with_patterns { self.pattern_head(&rep)? } else { (Vec::new(), Vec::new(), Vec::new()) };
            acts.push(SpanActivations {
                rep,
                constituent_pre,
                constituent_hidden,
                pattern_pre,
                pattern_hidden,
                pattern_log_probs,
            });
        }
        Ok(SentenceForward { encoded, chart, spans: acts, with_patterns })
    }

    /// Backpropagates span-level gradients into the store.
    ///
    /// `score_grads[k]` is the gradient w.r.t. the constituent scores of the
    /// `k`-th span (empty = none); `pattern_logit_grads[k]` likewise for the
    /// pattern logits.
    pub fn backward(
        &mut self,
        fwd: &SentenceForward,
        score_grads: &[Vec<f64>],
        pattern_logit_grads: &[Vec<f64>],
    ) -> Result<(), ModelError> {
        let n = fwd.encoded.len();
        let h = self.config.hidden_dim;
        let ids = self.ids;
        let mut d_fence = Matrix::zeros(n + 1, h);
        for (k, (i, j)) in spans(n).enumerate() {
            let act = &fwd.spans[k];
            let mut d_rep = vec![0.0; h];
            if let Some(g) = score_grads.get(k).filter(|g| !g.is_empty()) {
                let d_hidden =
                    self.backward_affine(ids.constituent_out, ids.constituent_out_bias, &act.constituent_hidden, g)?;
                let d_pre = relu_backward(&act.constituent_pre, &d_hidden);
                let d = self.backward_affine(ids.constituent_hidden, ids.constituent_hidden_bias, &act.rep, &d_pre)?;
                axpy(1.0, &d, &mut d_rep);
            }
            if let Some(g) = pattern_logit_grads.get(k).filter(|g| !g.is_empty()) {
                let d_hidden = self.backward_affine(ids.pattern_out, ids.pattern_out_bias, &act.pattern_hidden, g)?;
                let mut d_pre = relu_backward(&act.pattern_pre, &d_hidden);
                if self.corrupt_backward {
                    d_pre.iter_mut().for_each(|x| *x *= 0.5);
                }
                let d = self.backward_affine(ids.pattern_hidden, ids.pattern_hidden_bias, &act.rep, &d_pre)?;
                axpy(1.0, &d, &mut d_rep);
            }
            axpy(1.0, &d_rep, d_fence.row_mut(j));
            axpy(-1.0, &d_rep, d_fence.row_mut(i));
        }
        self.backward_encoder(&fwd.encoded, &d_fence)
    }

    fn backward_affine(
        &mut self,
        w: ParamId,
        b: ParamId,
        input: &[f64],
        grad_out: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        let (wv, wg, bg) = self.store.affine_parts(w, b);
        Ok(affine_backward(wv, input, grad_out, wg, bg.data_mut())?)
    }

    fn backward_encoder(&mut self, enc: &EncodedSentence, d_fence: &Matrix) -> Result<(), ModelError> {
        let n = enc.len();
        let r = self.config.hidden_dim / 2;
        let e_dim = self.config.word_dim + self.config.pos_dim;
        let ids = self.ids;
        let zero = vec![0.0; r];
        let mut d_inputs = vec![vec![0.0; e_dim]; n];

        // left-to-right states: f_{k+1} = forward[k] feeds fencepost k + 1
        let mut carry = vec![0.0; r];
        for k in (0..n).rev() {
            let mut g = d_fence.row(k + 1)[..r].to_vec();
            axpy(1.0, &carry, &mut g);
            let dz = tanh_backward(&enc.forward[k], &g);
            let prev = if k == 0 { &zero } else { &enc.forward[k - 1] };
            let de = self.backward_affine(ids.forward_input, ids.forward_bias, &enc.inputs[k], &dz)?;
            axpy(1.0, &de, &mut d_inputs[k]);
            let (rv, rg) = self.store.value_and_grad_mut(ids.forward_recurrent);
            rg.add_outer(1.0, &dz, prev)?;
            carry = rv.matvec_t(&dz)?;
        }

        // right-to-left states: b_{k+1} = backward[k] feeds fencepost k
        let mut carry = vec![0.0; r];
        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            let mut g = d_fence.row(k)[r..].to_vec();
            axpy(1.0, &carry, &mut g);
            let dz = tanh_backward(&enc.backward[k], &g);
            let next = if k + 1 == n { &zero } else { &enc.backward[k + 1] };
            let de = self.backward_affine(ids.backward_input, ids.backward_bias, &enc.inputs[k], &dz)?;
            axpy(1.0, &de, &mut d_inputs[k]);
            let (rv, rg) = self.store.value_and_grad_mut(ids.backward_recurrent);
            rg.add_outer(1.0, &dz, next)?;
            carry = rv.matvec_t(&dz)?;
        }

        let wd = self.config.word_dim;
        for (k, de) in d_inputs.iter().enumerate() {
            axpy(1.0, &de[..wd], self.store.grad_mut(ids.word_embedding).row_mut(enc.word_ids[k]));
            axpy(1.0, &de[wd..], self.store.grad_mut(ids.pos_embedding).row_mut(enc.tag_ids[k]));
        }
        Ok(())
    }

    /// Backpropagates a gradient w.r.t. the consistency logits into `W2c`,
    /// `U` and `W2p`.
    pub fn consistency_backward(&mut self, fwd: &ConsistencyForward, d_logits: &Matrix) -> Result<(), ModelError> {
        let ids = self.ids;
        let w2c = self.store.value(ids.constituent_out).clone();
        let u = self.store.value(ids.consistency).clone();
        let w2p = self.store.value(ids.pattern_out).clone();
        // M = W2c U W2p^T
        let d_projected = d_logits.matmul(&w2p)?; // dM W2p
        let d_w2p = d_logits.transpose().matmul(&fwd.projected)?;
        let d_w2c = d_projected.matmul(&u.transpose())?;
        let d_u = w2c.transpose().matmul(&d_projected)?;
        self.store.grad_mut(ids.constituent_out).add_scaled(1.0, &d_w2c)?;
        self.store.grad_mut(ids.consistency).add_scaled(1.0, &d_u)?;
        self.store.grad_mut(ids.pattern_out).add_scaled(1.0, &d_w2p)?;
        Ok(())
    }

    /// Label strings of decoded spans.
    pub fn labeled_spans(&self, decoded: &DecodedTree) -> Vec<LabeledSpan> {
        decoded.spans.iter().map(|s| LabeledSpan::new(s.start, s.end, self.vocabs.labels.label(s.label))).collect()
    }

    /// Best tree for a tagged sentence, unary chains expanded.
    pub fn parse(&self, tokens: &[(String, String)]) -> Result<Tree, ModelError> {
        let fwd = self.forward(tokens, false)?;
        let decoded = cky(&fwd.chart);
        let tree = spans_to_tree(tokens, &self.labeled_spans(&decoded))?;
        Ok(expand_unaries(&tree))
    }
}
