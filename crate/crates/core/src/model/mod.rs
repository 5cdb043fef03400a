//! Annotator-conditioned transformer classifier.
//!
//! Pipeline: token + position embeddings, pre-norm encoder blocks, final
//! norm; the pooled annotator vector is projected to hidden size and
//! prepended as an extra position; feature blocks run over the fused
//! sequence; the first position feeds a tanh head producing two logits.
//! With fusion disabled the feature blocks run directly on the encoder
//! output and the head reads the `[CLS]` position.
//!
//! Matrices use the row-vector convention `y = x W + b`. Batches are packed:
//! all sequences are stacked into one matrix and attention is restricted to
//! each sequence's row range.

mod checkpoint;
mod grad_check;
mod layers;
mod params;

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotator::{AnnotatorEmbeddingSet, EmbeddingSource};
use crate::ctr::Pooling;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::instances::{render_tokens, ModelText, Tokenizer};

pub use checkpoint::{Checkpoint, TensorRecord};
pub use grad_check::{grad_check, GradCheckReport, GroupCheck};
pub use params::{Gradients, ParamEntry, ParamGroup, ParamId, ParamStore};

use layers::{
    attention, attention_backward, bias_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, LnCache,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub feature_layers: usize,
    /// Inner width of the feed-forward sublayers.
    pub ffn_size: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Width of one annotator embedding (before pooling).
    pub annotator_dim: usize,
    pub pooling: Pooling,
    /// Slots of concat pooling; ignored by the other strategies.
    pub max_annotators: usize,
    pub dropout: f64,
    /// `false` gives the plain encoder + head baseline.
    pub fusion: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    /// The toy configuration with vocabulary and annotator width unset.
    fn default() -> Self {
        ModelConfig::toy(0, 0)
    }
}

impl ModelConfig {
    /// Toy-scale defaults: hidden 64, 2 encoder layers, 4 heads, 6 feature
    /// layers.
    pub fn toy(vocab_size: usize, annotator_dim: usize) -> Self {
        ModelConfig {
            hidden_size: 64,
            encoder_layers: 2,
            attention_heads: 4,
            feature_layers: 6,
            ffn_size: 256,
            max_seq_len: 128,
            vocab_size,
            annotator_dim,
            pooling: Pooling::Mean,
            max_annotators: 1,
            dropout: 0.1,
            fusion: true,
            init_std: 0.02,
        }
    }

    pub fn baseline(vocab_size: usize) -> Self {
        ModelConfig {
            fusion: false,
            annotator_dim: 0,
            ..ModelConfig::toy(vocab_size, 0)
        }
    }

    /// Width of the pooled annotator vector fed to the fusion projection.
    pub fn fuse_input_dim(&self) -> usize {
        self.pooling.output_dim(self.annotator_dim, self.max_annotators)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.hidden_size == 0 || self.attention_heads == 0 || self.hidden_size % self.attention_heads != 0 {
            return fail("hidden_size must be a positive multiple of attention_heads");
        }
        if self.feature_layers == 0 {
            return fail("feature_layers must be at least 1");
        }
        if self.ffn_size == 0 || self.max_seq_len == 0 || self.vocab_size == 0 {
            return fail("ffn_size, max_seq_len and vocab_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail("init_std must be positive");
        }
        if self.fusion && (self.annotator_dim == 0 || self.fuse_input_dim() == 0) {
            return fail("fusion needs a positive annotator_dim (and max_annotators for concat pooling)");
        }
        Ok(())
    }
}

/// A rendered input: token ids, indices of its annotators in the model's
/// embedding table, and the target label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub annotators: Vec<usize>,
    pub target: Label,
}

#[derive(Clone, Debug)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    h: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
}

#[derive(Clone, Debug)]
enum AnnotatorParams {
    None,
    /// `A x dim` embedding table (ctr and learnt sources).
    Table(ParamId),
    /// Constant `A x N` history rows with a trainable `N x dim` projection.
    History { rows: Array2<f64>, projection: ParamId },
}

#[derive(Clone, Debug)]
struct AnnotatorMeta {
    source: EmbeddingSource,
    ids: Vec<String>,
    frozen: bool,
}

/// Inverted dropout driven by an optional training RNG.
struct Dropout<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    p: f64,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &mut Array2<f64>) -> Option<Array2<f64>> {
        let p = self.p;
        let rng = self.rng.as_deref_mut().filter(|_| p > 0.0)?;
        let keep = 1.0 / (1.0 - p);
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < p { 0.0 } else { keep });
        *x *= &mask;
        Some(mask)
    }
}

fn masked(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

struct Trace {
    tokens: Vec<usize>,
    positions: Vec<usize>,
    segments: Vec<Range<usize>>,
    emb_mask: Option<Array2<f64>>,
    enc: Vec<BlockCache>,
    enc_ln: LnCache,
    enc_out: Array2<f64>,
    fusion: Option<FusionTrace>,
    feat_segments: Vec<Range<usize>>,
    feat: Vec<BlockCache>,
    first_ln: LnCache,
    first_normed: Array2<f64>,
    z: Array2<f64>,
    logits: Array2<f64>,
}

struct FusionTrace {
    /// Effective `A x dim` annotator vectors.
    vectors: Array2<f64>,
    /// `S x fuse_input_dim` pooled vectors.
    pooled: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct AnnoModel {
    config: ModelConfig,
    params: ParamStore,
    tok_emb: ParamId,
    pos_emb: ParamId,
    encoder: Vec<Block>,
    enc_ln_g: ParamId,
    enc_ln_b: ParamId,
    annotator: AnnotatorParams,
    annotator_meta: Option<AnnotatorMeta>,
    fuse_proj: Option<ParamId>,
    features: Vec<Block>,
    feat_ln_g: ParamId,
    feat_ln_b: ParamId,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn matrix(&mut self, store: &mut ParamStore, name: String, group: ParamGroup, r: usize, c: usize) -> ParamId {
        let (rng, normal) = (&mut self.rng, &self.normal);
        store.add(name, group, r, c, || normal.sample(rng))
    }

    fn scaled(&mut self, store: &mut ParamStore, name: String, group: ParamGroup, r: usize, c: usize, std: f64) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        store.add(name, group, r, c, || normal.sample(rng))
    }
}

fn add_block(store: &mut ParamStore, init: &mut Init, prefix: &str, groups: [ParamGroup; 3], h: usize, f: usize) -> Block {
    let [attn, ffn, norm] = groups;
    let name = |n: &str| format!("{prefix}.{n}");
    Block {
        ln1_g: store.add(name("ln1.gamma"), norm, 1, h, || 1.0),
        ln1_b: store.add(name("ln1.beta"), norm, 1, h, || 0.0),
        wq: init.matrix(store, name("attn.wq"), attn, h, h),
        bq: store.add(name("attn.bq"), attn, 1, h, || 0.0),
        wk: init.matrix(store, name("attn.wk"), attn, h, h),
        bk: store.add(name("attn.bk"), attn, 1, h, || 0.0),
        wv: init.matrix(store, name("attn.wv"), attn, h, h),
        bv: store.add(name("attn.bv"), attn, 1, h, || 0.0),
        wo: init.matrix(store, name("attn.wo"), attn, h, h),
        bo: store.add(name("attn.bo"), attn, 1, h, || 0.0),
        ln2_g: store.add(name("ln2.gamma"), norm, 1, h, || 1.0),
        ln2_b: store.add(name("ln2.beta"), norm, 1, h, || 0.0),
        w1: init.matrix(store, name("ffn.w1"), ffn, h, f),
        b1: store.add(name("ffn.b1"), ffn, 1, f, || 0.0),
        w2: init.matrix(store, name("ffn.w2"), ffn, f, h),
        b2: store.add(name("ffn.b2"), ffn, 1, h, || 0.0),
    }
}

impl AnnoModel {
    /// Builds a seeded model. Fusion models take ownership of the annotator
    /// embedding set; its vectors (or history projection) become model
    /// parameters, trainable unless the set is frozen.
    pub fn new(config: ModelConfig, embeddings: Option<AnnotatorEmbeddingSet>, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let mut store = ParamStore::new();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, config.init_std).expect("validated std"),
        };

        let tok_emb = init.matrix(&mut store, "embeddings.token".into(), ParamGroup::Embeddings, config.vocab_size, h);
        let pos_emb = init.matrix(&mut store, "embeddings.position".into(), ParamGroup::Embeddings, config.max_seq_len, h);
        let enc_groups = [ParamGroup::EncoderAttention, ParamGroup::EncoderFfn, ParamGroup::EncoderNorm];
        let encoder = (0..config.encoder_layers)
            .map(|l| add_block(&mut store, &mut init, &format!("encoder.{l}"), enc_groups, h, config.ffn_size))
            .collect();
        let enc_ln_g = store.add("encoder.ln.gamma", ParamGroup::EncoderNorm, 1, h, || 1.0);
        let enc_ln_b = store.add("encoder.ln.beta", ParamGroup::EncoderNorm, 1, h, || 0.0);

        let (annotator, annotator_meta, fuse_proj) = match (config.fusion, embeddings) {
            (false, None) => (AnnotatorParams::None, None, None),
            (false, Some(_)) => {
                return Err(Error::Config("a model without fusion takes no annotator embeddings".into()))
            }
            (true, None) => return Err(Error::Config("fusion requires an annotator embedding set".into())),
            (true, Some(set)) => {
                if set.dim != config.annotator_dim {
                    return Err(Error::DimensionMismatch {
                        expected: config.annotator_dim,
                        actual: set.dim,
                        context: "annotator embedding dim vs model annotator_dim",
                    });
                }
                if set.is_empty() {
                    return Err(Error::Config("annotator embedding set is empty".into()));
                }
                let annotator = match set.projection {
                    Some(p) => {
                        if p.nrows() != set.vectors.ncols() || p.ncols() != set.dim {
                            return Err(Error::DimensionMismatch {
                                expected: set.vectors.ncols(),
                                actual: p.nrows(),
                                context: "history projection rows vs history length",
                            });
                        }
                        let mut values = p.iter().copied();
                        let id = store.add("annotator.history_projection", ParamGroup::AnnotatorProjection, p.nrows(), p.ncols(), || {
                            values.next().expect("sized")
                        });
                        store.set_trainable(id, !set.frozen);
                        AnnotatorParams::History { rows: set.vectors, projection: id }
                    }
                    None => {
                        if set.vectors.ncols() != set.dim {
                            return Err(Error::DimensionMismatch {
                                expected: set.dim,
                                actual: set.vectors.ncols(),
                                context: "annotator vector width",
                            });
                        }
                        let mut values = set.vectors.iter().copied();
                        let id = store.add("annotator.table", ParamGroup::AnnotatorTable, set.vectors.nrows(), set.dim, || {
                            values.next().expect("sized")
                        });
                        store.set_trainable(id, !set.frozen);
                        AnnotatorParams::Table(id)
                    }
                };
                let din = config.fuse_input_dim();
                let proj = init.scaled(
                    &mut store,
                    "annotator.fuse_projection".into(),
                    ParamGroup::AnnotatorProjection,
                    din,
                    h,
                    1.0 / (din as f64).sqrt(),
                );
                let meta = AnnotatorMeta {
                    source: set.source,
                    ids: set.annotator_ids,
                    frozen: set.frozen,
                };
                (annotator, Some(meta), Some(proj))
            }
        };

        let feat_groups = [ParamGroup::FeatureAttention, ParamGroup::FeatureFfn, ParamGroup::FeatureNorm];
        let features = (0..config.feature_layers)
            .map(|l| add_block(&mut store, &mut init, &format!("features.{l}"), feat_groups, h, config.ffn_size))
            .collect();
        let feat_ln_g = store.add("features.ln.gamma", ParamGroup::FeatureNorm, 1, h, || 1.0);
        let feat_ln_b = store.add("features.ln.beta", ParamGroup::FeatureNorm, 1, h, || 0.0);
        let head_w1 = init.matrix(&mut store, "head.w1".into(), ParamGroup::Head, h, h);
        let head_b1 = store.add("head.b1", ParamGroup::Head, 1, h, || 0.0);
        let head_w2 = init.matrix(&mut store, "head.w2".into(), ParamGroup::Head, h, 2);
        let head_b2 = store.add("head.b2", ParamGroup::Head, 1, 2, || 0.0);

        Ok(AnnoModel {
            config,
            params: store,
            tok_emb,
            pos_emb,
            encoder,
            enc_ln_g,
            enc_ln_b,
            annotator,
            annotator_meta,
            fuse_proj,
            features,
            feat_ln_g,
            feat_ln_b,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn uses_annotators(&self) -> bool {
        self.config.fusion
    }

    pub fn annotator_ids(&self) -> &[String] {
        self.annotator_meta.as_ref().map_or(&[], |m| &m.ids)
    }

    pub fn annotator_index(&self, id: &str) -> Result<usize> {
        self.annotator_ids()
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| Error::UnknownAnnotator(id.to_owned()))
    }

    /// Freezes or unfreezes the annotator embeddings (the table, or the
    /// history projection). The fusion projection stays trainable.
    pub fn set_annotators_frozen(&mut self, frozen: bool) {
        let id = match &self.annotator {
            AnnotatorParams::None => return,
            AnnotatorParams::Table(id) => *id,
            AnnotatorParams::History { projection, .. } => *projection,
        };
        self.params.set_trainable(id, !frozen);
        if let Some(meta) = &mut self.annotator_meta {
            meta.frozen = frozen;
        }
    }

    /// The current annotator embedding set, reflecting any training updates.
    pub fn embedding_set(&self) -> Option<AnnotatorEmbeddingSet> {
        let meta = self.annotator_meta.as_ref()?;
        let (vectors, projection) = match &self.annotator {
            AnnotatorParams::None => return None,
            AnnotatorParams::Table(id) => (self.params.to_array(*id), None),
            AnnotatorParams::History { rows, projection } => (rows.clone(), Some(self.params.to_array(*projection))),
        };
        Some(AnnotatorEmbeddingSet {
            source: meta.source,
            dim: self.config.annotator_dim,
            annotator_ids: meta.ids.clone(),
            vectors,
            projection,
            frozen: meta.frozen,
        })
    }

    /// Renders an instance into an [`Example`], resolving its annotators.
    pub fn example(&self, instance: &impl ModelText, tokenizer: &Tokenizer, target: Label) -> Result<Example> {
        let tokens = render_tokens(instance, tokenizer);
        self.check_tokens(&tokens)?;
        let annotators = if self.config.fusion {
            instance
                .annotator_group()
                .iter()
                .map(|a| self.annotator_index(a))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Example {
            tokens,
            annotators,
            target,
        })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidRecord("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_tokens(&ex.tokens)?;
        if self.config.fusion {
            if ex.annotators.is_empty() {
                return Err(Error::InvalidRecord("input has no annotators".into()));
            }
            let n = self.annotator_ids().len();
            if let Some(&i) = ex.annotators.iter().find(|&&i| i >= n) {
                return Err(Error::UnknownAnnotator(format!("index {i}")));
            }
            if self.config.pooling == Pooling::Concat && ex.annotators.len() > self.config.max_annotators {
                return Err(Error::Config(format!(
                    "{} annotators exceed the {} concat slots",
                    ex.annotators.len(),
                    self.config.max_annotators
                )));
            }
        }
        Ok(())
    }

    // ---- single-input operations -------------------------------------

    /// Final-layer contextual representation (`L x hidden`), inference mode.
    pub fn encode(&self, tokens: &[u32]) -> Result<Array2<f64>> {
        self.check_tokens(tokens)?;
        let toks: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..toks.len()).collect();
        let segments = vec![0..toks.len()];
        let mut drop = Dropout { rng: None, p: 0.0 };
        let (out, ..) = self.encoder_forward(&toks, &positions, &segments, &mut drop);
        Ok(out)
    }

    /// Projects a pooled annotator vector to hidden size and prepends it.
    pub fn fuse(&self, contextual: &Array2<f64>, pooled: &[f64]) -> Result<Array2<f64>> {
        let proj = self
            .fuse_proj
            .ok_or_else(|| Error::Config("model has no annotator fusion".into()))?;
        if pooled.len() != self.config.fuse_input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.fuse_input_dim(),
                actual: pooled.len(),
                context: "pooled annotator vector",
            });
        }
        if contextual.ncols() != self.config.hidden_size {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden_size,
                actual: contextual.ncols(),
                context: "contextual width",
            });
        }
        let row = ArrayView1::from(pooled).dot(&self.params.view(proj));
        let mut fused = Array2::zeros((contextual.nrows() + 1, self.config.hidden_size));
        fused.row_mut(0).assign(&row);
        fused.slice_mut(s![1.., ..]).assign(contextual);
        Ok(fused)
    }

    /// Feature blocks over one (fused or encoder) sequence, then the head on
    /// its first position.
    pub fn classify(&self, fused: &Array2<f64>) -> Result<[f64; 2]> {
        if fused.ncols() != self.config.hidden_size || fused.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden_size,
                actual: fused.ncols(),
                context: "classifier input width",
            });
        }
        let mut drop = Dropout { rng: None, p: 0.0 };
        let segments = vec![0..fused.nrows()];
        let (x, _) = self.stack_forward(&self.features, fused.clone(), &segments, &mut drop);
        let (_, _, _, logits) = self.head_forward(&x, &segments);
        let out = [logits[[0, 0]], logits[[0, 1]]];
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite("classifier logits"))
        }
    }

    /// Pooled embedding of the named annotators.
    pub fn pooled_vector(&self, annotators: &[String]) -> Result<Vec<f64>> {
        let idx = annotators
            .iter()
            .map(|a| self.annotator_index(a))
            .collect::<Result<Vec<_>>>()?;
        if idx.is_empty() {
            return Err(Error::InvalidRecord("input has no annotators".into()));
        }
        let vectors = self.annotator_vectors();
        Ok(pool_rows(&vectors, &idx, self.config.pooling, self.config.max_annotators)?.to_vec())
    }

    /// render, encode, pool, fuse, classify.
    pub fn forward(&self, instance: &impl ModelText, tokenizer: &Tokenizer) -> Result<[f64; 2]> {
        let tokens = render_tokens(instance, tokenizer);
        let encoded = self.encode(&tokens)?;
        if self.config.fusion {
            let pooled = self.pooled_vector(instance.annotator_group())?;
            self.classify(&self.fuse(&encoded, &pooled)?)
        } else {
            self.classify(&encoded)
        }
    }

    // ---- packed batches ----------------------------------------------

    /// Inference logits for a batch.
    pub fn logits(&self, batch: &[Example]) -> Result<Vec<[f64; 2]>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let trace = self.forward_batch(batch, None)?;
        Ok(trace.logits.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    /// Mean cross-entropy of a batch in inference mode.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let trace = self.forward_batch(batch, None)?;
        Ok(cross_entropy(&trace.logits, batch).0)
    }

    /// Mean cross-entropy and its gradient. Dropout is active when `rng` is
    /// given. Gradients of frozen parameters are zero.
    pub fn loss_and_grad(&self, batch: &[Example], rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Gradients)> {
        let trace = self.forward_batch(batch, rng)?;
        let (loss, dlogits) = cross_entropy(&trace.logits, batch);
        let mut grads = self.params.zeros_like();
        self.backward(&trace, batch, &dlogits, &mut grads);
        for e in self.params.entries().iter().filter(|e| !e.trainable) {
            grads.values[e.range()].fill(0.0);
        }
        Ok((loss, grads))
    }

    fn forward_batch(&self, batch: &[Example], rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("empty batch".into()));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let mut drop = Dropout {
            rng,
            p: self.config.dropout,
        };
        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(batch.len());
        for ex in batch {
            let start = tokens.len();
            tokens.extend(ex.tokens.iter().map(|&t| t as usize));
            positions.extend(0..ex.tokens.len());
            segments.push(start..tokens.len());
        }
        let (enc_out, emb_mask, enc, enc_ln) = self.encoder_forward(&tokens, &positions, &segments, &mut drop);

        let (feat_in, fusion, feat_segments) = match self.fuse_proj {
            None => (enc_out.clone(), None, segments.clone()),
            Some(proj) => {
                let vectors = self.annotator_vectors();
                let din = self.config.fuse_input_dim();
                let mut pooled = Array2::zeros((batch.len(), din));
                for (mut row, ex) in pooled.rows_mut().into_iter().zip(batch) {
                    row.assign(&pool_rows(&vectors, &ex.annotators, self.config.pooling, self.config.max_annotators)?);
                }
                let prepended = pooled.dot(&self.params.view(proj));
                let h = self.config.hidden_size;
                let mut fused = Array2::zeros((tokens.len() + batch.len(), h));
                let mut fsegs = Vec::with_capacity(batch.len());
                for (s, seg) in segments.iter().enumerate() {
                    let start = seg.start + s;
                    fused.row_mut(start).assign(&prepended.row(s));
                    fused
                        .slice_mut(s![start + 1..seg.end + s + 1, ..])
                        .assign(&enc_out.slice(s![seg.clone(), ..]));
                    fsegs.push(start..seg.end + s + 1);
                }
                (fused, Some(FusionTrace { vectors, pooled }), fsegs)
            }
        };

        let (feat_out, feat) = self.stack_forward(&self.features, feat_in, &feat_segments, &mut drop);
        let (first_ln, first_normed, z, logits) = self.head_forward(&feat_out, &feat_segments);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("classifier logits"));
        }
        Ok(Trace {
            tokens,
            positions,
            segments,
            emb_mask,
            enc,
            enc_ln,
            enc_out,
            fusion,
            feat_segments,
            feat,
            first_ln,
            first_normed,
            z,
            logits,
        })
    }

    fn annotator_vectors(&self) -> Array2<f64> {
        match &self.annotator {
            AnnotatorParams::None => Array2::zeros((0, 0)),
            AnnotatorParams::Table(id) => self.params.to_array(*id),
            AnnotatorParams::History { rows, projection } => rows.dot(&self.params.view(*projection)),
        }
    }

    #[allow(clippy::type_complexity)]
    fn encoder_forward(
        &self,
        tokens: &[usize],
        positions: &[usize],
        segments: &[Range<usize>],
        drop: &mut Dropout,
    ) -> (Array2<f64>, Option<Array2<f64>>, Vec<BlockCache>, LnCache) {
        let p = &self.params;
        let mut x = p.view(self.tok_emb).select(Axis(0), tokens);
        x += &p.view(self.pos_emb).select(Axis(0), positions);
        let emb_mask = drop.apply(&mut x);
        let (x, caches) = self.stack_forward(&self.encoder, x, segments, drop);
        let (out, ln) = layer_norm(&x.view(), &p.view(self.enc_ln_g), &p.view(self.enc_ln_b));
        (out, emb_mask, caches, ln)
    }

    fn stack_forward(
        &self,
        blocks: &[Block],
        mut x: Array2<f64>,
        segments: &[Range<usize>],
        drop: &mut Dropout,
    ) -> (Array2<f64>, Vec<BlockCache>) {
        let mut caches = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (y, cache) = self.block_forward(b, x, segments, drop);
            x = y;
            caches.push(cache);
        }
        (x, caches)
    }

    fn block_forward(&self, b: &Block, mut x: Array2<f64>, segments: &[Range<usize>], drop: &mut Dropout) -> (Array2<f64>, BlockCache) {
        let p = &self.params;
        let (a, ln1) = layer_norm(&x.view(), &p.view(b.ln1_g), &p.view(b.ln1_b));
        let q = linear(&a.view(), &p.view(b.wq), Some(&p.view(b.bq)));
        let k = linear(&a.view(), &p.view(b.wk), Some(&p.view(b.bk)));
        let v = linear(&a.view(), &p.view(b.wv), Some(&p.view(b.bv)));
        let (ctx, probs) = attention(&q, &k, &v, segments, self.config.attention_heads);
        let mut o = linear(&ctx.view(), &p.view(b.wo), Some(&p.view(b.bo)));
        let attn_mask = drop.apply(&mut o);
        x += &o;
        let (bn, ln2) = layer_norm(&x.view(), &p.view(b.ln2_g), &p.view(b.ln2_b));
        let u = linear(&bn.view(), &p.view(b.w1), Some(&p.view(b.b1)));
        let h = gelu(&u);
        let mut f = linear(&h.view(), &p.view(b.w2), Some(&p.view(b.b2)));
        let ffn_mask = drop.apply(&mut f);
        x += &f;
        let cache = BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            ln2,
            b: bn,
            u,
            h,
            ffn_mask,
        };
        (x, cache)
    }

    fn head_forward(&self, x: &Array2<f64>, segments: &[Range<usize>]) -> (LnCache, Array2<f64>, Array2<f64>, Array2<f64>) {
        let p = &self.params;
        let firsts: Vec<usize> = segments.iter().map(|s| s.start).collect();
        let first = x.select(Axis(0), &firsts);
        let (normed, ln) = layer_norm(&first.view(), &p.view(self.feat_ln_g), &p.view(self.feat_ln_b));
        let z = linear(&normed.view(), &p.view(self.head_w1), Some(&p.view(self.head_b1))).mapv(f64::tanh);
        let logits = linear(&z.view(), &p.view(self.head_w2), Some(&p.view(self.head_b2)));
        (ln, normed, z, logits)
    }

    fn lin_back(&self, g: &mut Gradients, x: &Array2<f64>, w: ParamId, b: ParamId, dy: &Array2<f64>) -> Array2<f64> {
        bias_backward(&dy.view(), &mut g.view_mut(&self.params, b));
        linear_backward(&x.view(), &self.params.view(w), &dy.view(), &mut g.view_mut(&self.params, w))
    }

    fn ln_back(&self, g: &mut Gradients, cache: &LnCache, gamma: ParamId, beta: ParamId, dy: &Array2<f64>) -> Array2<f64> {
        let (dx, dg, db) = layer_norm_backward(&dy.view(), cache, &self.params.view(gamma));
        let mut gg = g.view_mut(&self.params, gamma);
        let mut row = gg.row_mut(0);
        row += &dg;
        let mut gb = g.view_mut(&self.params, beta);
        let mut row = gb.row_mut(0);
        row += &db;
        dx
    }

    fn block_backward(&self, b: &Block, c: &BlockCache, segments: &[Range<usize>], g: &mut Gradients, dy: Array2<f64>) -> Array2<f64> {
        let df = masked(&dy, &c.ffn_mask);
        let dh = self.lin_back(g, &c.h, b.w2, b.b2, &df);
        let du = gelu_backward(&c.u, &dh);
        let dbn = self.lin_back(g, &c.b, b.w1, b.b1, &du);
        let mut dx = dy;
        dx += &self.ln_back(g, &c.ln2, b.ln2_g, b.ln2_b, &dbn);

        let do_ = masked(&dx, &c.attn_mask);
        let dctx = self.lin_back(g, &c.ctx, b.wo, b.bo, &do_);
        let (dq, dk, dv) = attention_backward(&dctx, &c.q, &c.k, &c.v, &c.probs, segments, self.config.attention_heads);
        let mut da = self.lin_back(g, &c.a, b.wq, b.bq, &dq);
        da += &self.lin_back(g, &c.a, b.wk, b.bk, &dk);
        da += &self.lin_back(g, &c.a, b.wv, b.bv, &dv);
        dx += &self.ln_back(g, &c.ln1, b.ln1_g, b.ln1_b, &da);
        dx
    }

    fn backward(&self, t: &Trace, batch: &[Example], dlogits: &Array2<f64>, g: &mut Gradients) {
        let h = self.config.hidden_size;
        let dz = self.lin_back(g, &t.z, self.head_w2, self.head_b2, dlogits);
        let du = &dz * &t.z.mapv(|z| 1.0 - z * z);
        let dnormed = self.lin_back(g, &t.first_normed, self.head_w1, self.head_b1, &du);
        let dfirst = self.ln_back(g, &t.first_ln, self.feat_ln_g, self.feat_ln_b, &dnormed);

        let feat_rows = t.feat_segments.last().map_or(0, |s| s.end);
        let mut dx = Array2::zeros((feat_rows, h));
        for (s, seg) in t.feat_segments.iter().enumerate() {
            dx.row_mut(seg.start).assign(&dfirst.row(s));
        }
        for (b, c) in self.features.iter().zip(&t.feat).rev() {
            dx = self.block_backward(b, c, &t.feat_segments, g, dx);
        }

        let denc = match (&t.fusion, self.fuse_proj) {
            (Some(fusion), Some(proj)) => {
                let mut denc = Array2::zeros(t.enc_out.raw_dim());
                let mut dprep = Array2::zeros((batch.len(), h));
                for (s, seg) in t.segments.iter().enumerate() {
                    let start = seg.start + s;
                    dprep.row_mut(s).assign(&dx.row(start));
                    denc.slice_mut(s![seg.clone(), ..])
                        .assign(&dx.slice(s![start + 1..seg.end + s + 1, ..]));
                }
                let dpooled = linear_backward(&fusion.pooled.view(), &self.params.view(proj), &dprep.view(), &mut g.view_mut(&self.params, proj));
                self.annotator_backward(fusion, batch, &dpooled, g);
                denc
            }
            _ => dx,
        };

        let mut dx = self.ln_back(g, &t.enc_ln, self.enc_ln_g, self.enc_ln_b, &denc);
        for (b, c) in self.encoder.iter().zip(&t.enc).rev() {
            dx = self.block_backward(b, c, &t.segments, g, dx);
        }
        let demb = masked(&dx, &t.emb_mask);
        {
            let mut gt = g.view_mut(&self.params, self.tok_emb);
            for (r, &tok) in t.tokens.iter().enumerate() {
                let mut row = gt.row_mut(tok);
                row += &demb.row(r);
            }
        }
        let mut gp = g.view_mut(&self.params, self.pos_emb);
        for (r, &pos) in t.positions.iter().enumerate() {
            let mut row = gp.row_mut(pos);
            row += &demb.row(r);
        }
    }

    fn annotator_backward(&self, fusion: &FusionTrace, batch: &[Example], dpooled: &Array2<f64>, g: &mut Gradients) {
        let target = match &self.annotator {
            AnnotatorParams::None => return,
            AnnotatorParams::Table(id) => *id,
            AnnotatorParams::History { projection, .. } => *projection,
        };
        if !self.params.entry(target).trainable {
            return;
        }
        let mut dvec = Array2::zeros(fusion.vectors.raw_dim());
        for (ex, d) in batch.iter().zip(dpooled.rows()) {
            pool_rows_backward(&fusion.vectors, &ex.annotators, self.config.pooling, d, &mut dvec);
        }
        match &self.annotator {
            AnnotatorParams::Table(id) => {
                let mut gt = g.view_mut(&self.params, *id);
                gt += &dvec;
            }
            AnnotatorParams::History { rows, projection } => {
                let mut gp = g.view_mut(&self.params, *projection);
                ndarray::linalg::general_mat_mul(1.0, &rows.t(), &dvec, 1.0, &mut gp);
            }
            AnnotatorParams::None => {}
        }
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Array2<f64>, batch: &[Example]) -> (f64, Array2<f64>) {
    let n = batch.len() as f64;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((row, mut drow), ex) in logits.rows().into_iter().zip(d.rows_mut()).zip(batch) {
        let m = row[0].max(row[1]);
        let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
        let t = ex.target.index();
        loss += lse - row[t];
        for c in 0..2 {
            drow[c] = ((row[c] - lse).exp() - if c == t { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, d)
}

/// Softmax probabilities of a logit pair.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Predicted label of a logit pair (ties go to the negative class).
pub fn predict(logits: [f64; 2]) -> Label {
    Label::from_bool(logits[1] > logits[0])
}

fn pool_rows(vectors: &Array2<f64>, idx: &[usize], pooling: Pooling, max_annotators: usize) -> Result<Array1<f64>> {
    let dim = vectors.ncols();
    let rows = || idx.iter().map(|&i| vectors.row(i));
    Ok(match pooling {
        Pooling::Sum | Pooling::Mean => {
            let mut acc = Array1::zeros(dim);
            for r in rows() {
                acc += &r;
            }
            if pooling == Pooling::Mean {
                acc /= idx.len() as f64;
            }
            acc
        }
        Pooling::Max => {
            let mut acc = Array1::from_elem(dim, f64::NEG_INFINITY);
            for r in rows() {
                acc.zip_mut_with(&r, |a, &b| *a = a.max(b));
            }
            acc
        }
        Pooling::Concat => {
            if idx.len() > max_annotators {
                return Err(Error::Config(format!(
                    "{} annotators exceed the {max_annotators} concat slots",
                    idx.len()
                )));
            }
            let mut acc = Array1::zeros(dim * max_annotators);
            for (slot, r) in rows().enumerate() {
                acc.slice_mut(s![slot * dim..(slot + 1) * dim]).assign(&r);
            }
            acc
        }
    })
}

fn pool_rows_backward(vectors: &Array2<f64>, idx: &[usize], pooling: Pooling, d: ArrayView1<f64>, dvec: &mut Array2<f64>) {
    let dim = vectors.ncols();
    match pooling {
        Pooling::Sum | Pooling::Mean => {
            let scale = if pooling == Pooling::Mean { 1.0 / idx.len() as f64 } else { 1.0 };
            for &i in idx {
                dvec.row_mut(i).scaled_add(scale, &d);
            }
        }
        Pooling::Max => {
            // The first annotator attaining the maximum receives the gradient.
            for c in 0..dim {
                let best = idx
                    .iter()
                    .copied()
                    .reduce(|a, b| if vectors[[b, c]] > vectors[[a, c]] { b } else { a })
                    .expect("non-empty group");
                dvec[[best, c]] += d[c];
            }
        }
        Pooling::Concat => {
            for (slot, &i) in idx.iter().enumerate() {
                let mut row = dvec.row_mut(i);
                row += &d.slice(s![slot * dim..(slot + 1) * dim]);
            }
        }
    }
}

#[cfg(test)]
mod tests;
