//! Classifier architectures: single-modality linear and transformer
//! baselines, late fusion, coattention-based early fusion, concatenation
//! early fusion, and score combination.

mod attention;
mod checkpoint;

pub use attention::{
    coattention_forward, multi_head_attention, CoattentionStack, EncoderBlock, MhaParams,
    COATTENTION_LAYERS, FF_RATIO,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use std::fmt;

use rand::Rng as _;
use thiserror::Error;

use crate::diffcore::{
    add_many, affine, concat, cross_entropy, dropout, layer_norm, masked_mean, relu, softmax,
    stack_rows, DiffError, Mask, Mode, ParamStore, Scalar, Tensor, Var,
};
use crate::granularity::{GranError, Granularity, LayerMixer, LAYER_NORM_EPS};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Gran(#[from] GranError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("missing input: {0}")]
    MissingInput(String),
}

/// Architecture selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Single-modality position-wise FF classifier.
    Linear,
    /// Single-modality transformer-encoder classifier.
    Transformer,
    /// Per-branch FF models with summed logits.
    LateFusion,
    /// Coattention-based early fusion.
    Coattention,
    /// Concatenation-based early fusion.
    ConcatFusion,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::Transformer => "transformer",
            Architecture::LateFusion => "late_fusion",
            Architecture::Coattention => "coattention",
            Architecture::ConcatFusion => "concat_fusion",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Architecture::Linear),
            "transformer" => Some(Architecture::Transformer),
            "late_fusion" => Some(Architecture::LateFusion),
            "coattention" => Some(Architecture::Coattention),
            "concat_fusion" => Some(Architecture::ConcatFusion),
            _ => None,
        }
    }

    /// Transformer-based architectures train with a smaller default
    /// learning rate than the FF-based ones.
    pub fn is_transformer_based(self) -> bool {
        matches!(self, Architecture::Transformer | Architecture::Coattention)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Canonical ordering of speech granularities in fusion inputs: P, W, S, F.
pub fn canonical_granularity_order(gs: &mut Vec<Granularity>) {
    let rank = |g: &Granularity| match g {
        Granularity::Phone => 0,
        Granularity::Word => 1,
        Granularity::Syllable => 2,
        Granularity::Frame => 3,
        Granularity::Wordpiece => 4,
    };
    gs.sort_by_key(rank);
    gs.dedup();
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Speech granularity set G, stored in canonical order.
    pub granularities: Vec<Granularity>,
    pub use_text: bool,
    pub dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub heads: usize,
    pub dropout: f64,
    pub classes: usize,
    pub speech_layers: usize,
    pub text_layers: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.classes < 2 || self.dim == 0 {
            return fail(format!(
                "classes ({}) must be >= 2 and dim ({}) positive",
                self.classes, self.dim
            ));
        }
        if self.granularities.contains(&Granularity::Wordpiece) {
            return fail("wordpiece is a text granularity, not a speech one".into());
        }
        match self.arch {
            Architecture::Linear | Architecture::Transformer => {
                let inputs = self.granularities.len() + usize::from(self.use_text);
                if inputs != 1 {
                    return fail(format!(
                        "{} is single-modality: exactly one input required, got text={} G={:?}",
                        self.arch, self.use_text, self.granularities
                    ));
                }
            }
            Architecture::LateFusion | Architecture::Coattention => {
                if !self.use_text || self.granularities.is_empty() {
                    return fail(format!(
                        "{} requires text plus a nonempty speech granularity set",
                        self.arch
                    ));
                }
            }
            Architecture::ConcatFusion => {
                if !self.use_text || self.granularities.len() != 1 {
                    return fail(
                        "concat_fusion requires text plus exactly one speech granularity".into(),
                    );
                }
            }
        }
        if matches!(self.arch, Architecture::Coattention | Architecture::Transformer)
            && self.dim % self.heads != 0
        {
            return fail(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            ));
        }
        Ok(())
    }

    /// Branch tags in forward order: text first, then speech granularities.
    pub fn branch_tags(&self) -> Vec<BranchTag> {
        let mut tags = Vec::new();
        if self.use_text {
            tags.push(BranchTag::Text);
        }
        tags.extend(self.granularities.iter().map(|&g| BranchTag::Speech(g)));
        tags
    }

    pub fn to_kv_string(&self) -> String {
        let gs: Vec<&str> = self.granularities.iter().map(|g| g.tag()).collect();
        format!(
            "arch = {}\ngranularities = {}\nuse_text = {}\ndim = {}\nhidden1 = {}\nhidden2 = {}\nheads = {}\ndropout = {}\nclasses = {}\nspeech_layers = {}\ntext_layers = {}\n",
            self.arch,
            gs.join(","),
            self.use_text,
            self.dim,
            self.hidden1,
            self.hidden2,
            self.heads,
            self.dropout,
            self.classes,
            self.speech_layers,
            self.text_layers,
        )
    }

    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let bad = |msg: String| ModelError::InvalidSpec(msg);
        let mut arch = None;
        let mut granularities = Vec::new();
        let mut use_text = false;
        let mut dim = 0usize;
        let mut hidden1 = 128usize;
        let mut hidden2 = 128usize;
        let mut heads = 8usize;
        let mut p_dropout = 0.2f64;
        let mut classes = 4usize;
        let mut speech_layers = 0usize;
        let mut text_layers = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "arch" => {
                    arch = Some(
                        Architecture::from_name(value)
                            .ok_or_else(|| bad(format!("unknown architecture {value:?}")))?,
                    )
                }
                "granularities" => {
                    for tag in value.split(',').filter(|t| !t.trim().is_empty()) {
                        granularities.push(
                            Granularity::from_tag(tag.trim())
                                .ok_or_else(|| bad(format!("unknown granularity {tag:?}")))?,
                        );
                    }
                }
                "use_text" => use_text = value.parse().map_err(|_| bad(format!("bad bool {value:?}")))?,
                "dim" => dim = value.parse().map_err(|_| bad(format!("bad dim {value:?}")))?,
                "hidden1" => hidden1 = value.parse().map_err(|_| bad(format!("bad hidden1 {value:?}")))?,
                "hidden2" => hidden2 = value.parse().map_err(|_| bad(format!("bad hidden2 {value:?}")))?,
                "heads" => heads = value.parse().map_err(|_| bad(format!("bad heads {value:?}")))?,
                "dropout" => p_dropout = value.parse().map_err(|_| bad(format!("bad dropout {value:?}")))?,
                "classes" => classes = value.parse().map_err(|_| bad(format!("bad classes {value:?}")))?,
                "speech_layers" => {
                    speech_layers = value.parse().map_err(|_| bad(format!("bad speech_layers {value:?}")))?
                }
                "text_layers" => {
                    text_layers = value.parse().map_err(|_| bad(format!("bad text_layers {value:?}")))?
                }
                other => return Err(bad(format!("unknown model spec key {other:?}"))),
            }
        }
        canonical_granularity_order(&mut granularities);
        let spec = ModelSpec {
            arch: arch.ok_or_else(|| bad("missing arch".into()))?,
            granularities,
            use_text,
            dim,
            hidden1,
            hidden2,
            heads,
            dropout: p_dropout,
            classes,
            speech_layers,
            text_layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One input sequence: the raw [L, K, D] layer stack plus its mask.
pub struct SeqInput<T: Scalar> {
    pub stack: Tensor<T>,
    pub mask: Mask,
}

impl<T: Scalar> SeqInput<T> {
    pub fn full(stack: Tensor<T>) -> Self {
        let k = stack.shape()[1];
        SeqInput {
            stack,
            mask: Mask::full(k),
        }
    }
}

/// All sequences a model may consume for one utterance.
pub struct Features<T: Scalar> {
    pub text: Option<SeqInput<T>>,
    pub speech: Vec<(Granularity, SeqInput<T>)>,
}

impl<T: Scalar> Features<T> {
    pub fn speech_for(&self, g: Granularity) -> Option<&SeqInput<T>> {
        self.speech.iter().find(|(sg, _)| *sg == g).map(|(_, s)| s)
    }
}

/// Per-utterance logit vector and posterior over the emotion classes.
#[derive(Clone, Debug)]
pub struct Prediction<T: Scalar> {
    pub logits: Tensor<T>,
    pub posterior: Tensor<T>,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_logits(logits: Tensor<T>) -> Self {
        let v = softmax(&Var::constant(logits.clone()));
        Prediction {
            logits,
            posterior: v.clone_value(),
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.posterior.data().iter().enumerate() {
            if v > self.posterior.data()[best] {
                best = i;
            }
        }
        best
    }
}

/// Average the output logits of two models into a combined prediction.
pub fn combine_scores<T: Scalar>(
    logits_a: &Tensor<T>,
    logits_b: &Tensor<T>,
) -> Result<Prediction<T>, ModelError> {
    if logits_a.shape() != logits_b.shape() || logits_a.rank() != 1 {
        return Err(ModelError::Diff(DiffError::ShapeMismatch {
            context: "combine_scores".into(),
            expected: format!("{:?}", logits_a.shape()),
            got: format!("{:?}", logits_b.shape()),
        }));
    }
    let half = T::from_f64(0.5);
    let avg = logits_a.zip_map(logits_b, |a, b| (a + b) * half);
    Ok(Prediction::from_logits(avg))
}

/// A weight matrix and bias vector.
pub struct Dense<T: Scalar> {
    pub w: Var<T>,
    pub b: Var<T>,
}

/// Kaiming-style uniform fan-in initialization; biases start at zero.
pub(crate) fn init_dense<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Dense<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data: Vec<T> = (0..fan_in * fan_out)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    let w = Tensor::new(vec![fan_in, fan_out], data).expect("matching extents");
    Dense {
        w: store.add(format!("{prefix}.w"), w),
        b: store.add(format!("{prefix}.b"), Tensor::zeros(&[fan_out])),
    }
}

/// Two position-wise FF layers with ReLU and dropout, a global average,
/// and a logit layer. Also usable on a single vector (no pooling).
pub struct LinearBranch<T: Scalar> {
    pub ff1: Dense<T>,
    pub ff2: Dense<T>,
    pub out: Dense<T>,
}

impl<T: Scalar> LinearBranch<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        hidden1: usize,
        hidden2: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Self {
        LinearBranch {
            ff1: init_dense(store, &format!("{prefix}.ff1"), in_dim, hidden1, rng),
            ff2: init_dense(store, &format!("{prefix}.ff2"), hidden1, hidden2, rng),
            out: init_dense(store, &format!("{prefix}.out"), hidden2, classes, rng),
        }
    }

    /// Position-wise FF stack, masked mean, then the logit layer.
    /// Softmax is deliberately absent: branch logits are summed across
    /// branches before any softmax.
    pub fn forward_seq(
        &self,
        seq: &Var<T>,
        mask: &Mask,
        p_drop: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<T>, ModelError> {
        let h = dropout(&relu(&affine(seq, &self.ff1.w, &self.ff1.b)?), p_drop, mode, rng)?;
        let l = dropout(&relu(&affine(&h, &self.ff2.w, &self.ff2.b)?), p_drop, mode, rng)?;
        let pooled = masked_mean(&l, mask)?;
        Ok(affine(&pooled, &self.out.w, &self.out.b)?)
    }

    /// Same stack applied to a single already-pooled vector.
    pub fn forward_vec(
        &self,
        x: &Var<T>,
        p_drop: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<T>, ModelError> {
        let h = dropout(&relu(&affine(x, &self.ff1.w, &self.ff1.b)?), p_drop, mode, rng)?;
        let l = dropout(&relu(&affine(&h, &self.ff2.w, &self.ff2.b)?), p_drop, mode, rng)?;
        Ok(affine(&l, &self.out.w, &self.out.b)?)
    }
}

/// Fusion head over concatenated coattention outputs:
/// g = LN(Relu(W4 c + b4) + c), logits = W5 g + b5.
pub struct FusionHead<T: Scalar> {
    pub ff: Dense<T>,
    pub ln_gain: Var<T>,
    pub ln_bias: Var<T>,
    pub out: Dense<T>,
}

impl<T: Scalar> FusionHead<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Self {
        FusionHead {
            ff: init_dense(store, &format!("{prefix}.ff"), in_dim, in_dim, rng),
            ln_gain: store.add(format!("{prefix}.ln_gain"), Tensor::full(&[in_dim], T::one())),
            ln_bias: store.add(format!("{prefix}.ln_bias"), Tensor::zeros(&[in_dim])),
            out: init_dense(store, &format!("{prefix}.out"), in_dim, classes, rng),
        }
    }

    pub fn forward(
        &self,
        fused: &Var<T>,
        p_drop: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<T>, ModelError> {
        let h = dropout(&relu(&affine(fused, &self.ff.w, &self.ff.b)?), p_drop, mode, rng)?;
        let residual = crate::diffcore::add(&h, fused)?;
        let normed = layer_norm(&residual, &self.ln_gain, &self.ln_bias, LAYER_NORM_EPS)?;
        Ok(affine(&normed, &self.out.w, &self.out.b)?)
    }
}

/// Branch identity inside fusion models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchTag {
    Text,
    Speech(Granularity),
}

impl BranchTag {
    pub fn tag(&self) -> &'static str {
        match self {
            BranchTag::Text => "T",
            BranchTag::Speech(g) => g.tag(),
        }
    }
}

enum Kind<T: Scalar> {
    Linear {
        mixer: LayerMixer<T>,
        branch: LinearBranch<T>,
    },
    Transformer {
        mixer: LayerMixer<T>,
        encoder: Vec<EncoderBlock<T>>,
        ff: Dense<T>,
        out: Dense<T>,
    },
    LateFusion {
        branches: Vec<(BranchTag, LayerMixer<T>, LinearBranch<T>)>,
    },
    Coattention {
        text_mixer: LayerMixer<T>,
        pairs: Vec<(Granularity, LayerMixer<T>, CoattentionStack<T>)>,
        head: FusionHead<T>,
    },
    ConcatFusion {
        text_mixer: LayerMixer<T>,
        speech_mixer: LayerMixer<T>,
        granularity: Granularity,
        branch: LinearBranch<T>,
    },
}

/// A built model: its spec, parameter store, and architecture-specific
/// parameter structure.
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    store: ParamStore<T>,
    kind: Kind<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = crate::rng::seeded(seed);
        let mut store = ParamStore::new();
        let s = spec;
        let mixer_for = |store: &mut ParamStore<T>, tag: BranchTag| {
            let layers = match tag {
                BranchTag::Text => s.text_layers,
                BranchTag::Speech(_) => s.speech_layers,
            };
            LayerMixer::new(store, &format!("mix.{}", tag.tag()), layers, s.dim)
        };
        let kind = match s.arch {
            Architecture::Linear => {
                let tag = *s.branch_tags().first().expect("validated");
                let mixer = mixer_for(&mut store, tag);
                let branch = LinearBranch::new(
                    &mut store,
                    &format!("branch.{}", tag.tag()),
                    s.dim,
                    s.hidden1,
                    s.hidden2,
                    s.classes,
                    &mut rng,
                );
                Kind::Linear { mixer, branch }
            }
            Architecture::Transformer => {
                let tag = *s.branch_tags().first().expect("validated");
                let mixer = mixer_for(&mut store, tag);
                let encoder = (0..3)
                    .map(|i| {
                        EncoderBlock::new(&mut store, &format!("enc{i}"), s.dim, s.heads, &mut rng)
                    })
                    .collect();
                let ff = init_dense(&mut store, "cls.ff", s.dim, s.hidden1, &mut rng);
                let out = init_dense(&mut store, "cls.out", s.hidden1, s.classes, &mut rng);
                Kind::Transformer {
                    mixer,
                    encoder,
                    ff,
                    out,
                }
            }
            Architecture::LateFusion => {
                let branches = s
                    .branch_tags()
                    .into_iter()
                    .map(|tag| {
                        let mixer = mixer_for(&mut store, tag);
                        let branch = LinearBranch::new(
                            &mut store,
                            &format!("branch.{}", tag.tag()),
                            s.dim,
                            s.hidden1,
                            s.hidden2,
                            s.classes,
                            &mut rng,
                        );
                        (tag, mixer, branch)
                    })
                    .collect();
                Kind::LateFusion { branches }
            }
            Architecture::Coattention => {
                let text_mixer = mixer_for(&mut store, BranchTag::Text);
                let pairs: Vec<_> = s
                    .granularities
                    .iter()
                    .map(|&g| {
                        let mixer = mixer_for(&mut store, BranchTag::Speech(g));
                        let stack = CoattentionStack::new(
                            &mut store,
                            &format!("coatt.{}", g.tag()),
                            s.dim,
                            s.heads,
                            &mut rng,
                        );
                        (g, mixer, stack)
                    })
                    .collect();
                let fused_dim = s.dim * pairs.len();
                let head = FusionHead::new(&mut store, "head", fused_dim, s.classes, &mut rng);
                Kind::Coattention {
                    text_mixer,
                    pairs,
                    head,
                }
            }
            Architecture::ConcatFusion => {
                let granularity = s.granularities[0];
                let text_mixer = mixer_for(&mut store, BranchTag::Text);
                let speech_mixer = mixer_for(&mut store, BranchTag::Speech(granularity));
                let branch = LinearBranch::new(
                    &mut store,
                    "branch.concat",
                    2 * s.dim,
                    s.hidden1,
                    s.hidden2,
                    s.classes,
                    &mut rng,
                );
                Kind::ConcatFusion {
                    text_mixer,
                    speech_mixer,
                    granularity,
                    branch,
                }
            }
        };
        Ok(Model {
            spec: spec.clone(),
            store,
            kind,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn text_input<'a>(&self, feats: &'a Features<T>) -> Result<&'a SeqInput<T>, ModelError> {
        feats
            .text
            .as_ref()
            .ok_or_else(|| ModelError::MissingInput("text stack".into()))
    }

    fn speech_input<'a>(
        &self,
        feats: &'a Features<T>,
        g: Granularity,
    ) -> Result<&'a SeqInput<T>, ModelError> {
        feats
            .speech_for(g)
            .ok_or_else(|| ModelError::MissingInput(format!("speech stack ({g})")))
    }

    /// Pre-softmax logits [C] for one utterance.
    pub fn forward(
        &self,
        feats: &Features<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<T>, ModelError> {
        Ok(self.forward_branches(feats, mode, rng)?.0)
    }

    /// Logits plus, for late fusion, the exposed per-branch logits.
    pub fn forward_branches(
        &self,
        feats: &Features<T>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Var<T>, Vec<(BranchTag, Var<T>)>), ModelError> {
        let p = self.spec.dropout;
        match &self.kind {
            Kind::Linear { mixer, branch } => {
                let tag = *self.spec.branch_tags().first().expect("validated");
                let input = match tag {
                    BranchTag::Text => self.text_input(feats)?,
                    BranchTag::Speech(g) => self.speech_input(feats, g)?,
                };
                let seq = mixer.mix(&input.stack)?;
                let logits = branch.forward_seq(&seq, &input.mask, p, mode, rng)?;
                Ok((logits, Vec::new()))
            }
            Kind::Transformer {
                mixer,
                encoder,
                ff,
                out,
            } => {
                let tag = *self.spec.branch_tags().first().expect("validated");
                let input = match tag {
                    BranchTag::Text => self.text_input(feats)?,
                    BranchTag::Speech(g) => self.speech_input(feats, g)?,
                };
                let mut seq = mixer.mix(&input.stack)?;
                for block in encoder {
                    seq = block.forward(&seq, &seq, &input.mask, p, mode, rng)?;
                }
                let pooled = masked_mean(&seq, &input.mask)?;
                let h = dropout(&relu(&affine(&pooled, &ff.w, &ff.b)?), p, mode, rng)?;
                let logits = affine(&h, &out.w, &out.b)?;
                Ok((logits, Vec::new()))
            }
            Kind::LateFusion { branches } => {
                let mut per_branch = Vec::with_capacity(branches.len());
                for (tag, mixer, branch) in branches {
                    let input = match tag {
                        BranchTag::Text => self.text_input(feats)?,
                        BranchTag::Speech(g) => self.speech_input(feats, *g)?,
                    };
                    let seq = mixer.mix(&input.stack)?;
                    let logits = branch.forward_seq(&seq, &input.mask, p, mode, rng)?;
                    per_branch.push((*tag, logits));
                }
                let total = add_many(
                    &per_branch.iter().map(|(_, l)| l.clone()).collect::<Vec<_>>(),
                )?;
                Ok((total, per_branch))
            }
            Kind::Coattention {
                text_mixer,
                pairs,
                head,
            } => {
                let text = self.text_input(feats)?;
                let text_seq = text_mixer.mix(&text.stack)?;
                let mut pooled = Vec::with_capacity(pairs.len());
                for (g, mixer, stack) in pairs {
                    let speech = self.speech_input(feats, *g)?;
                    let speech_seq = mixer.mix(&speech.stack)?;
                    pooled.push(coattention_forward(
                        &text_seq,
                        &text.mask,
                        &speech_seq,
                        &speech.mask,
                        stack,
                        p,
                        mode,
                        rng,
                    )?);
                }
                let fused = concat(&pooled)?;
                let logits = head.forward(&fused, p, mode, rng)?;
                Ok((logits, Vec::new()))
            }
            Kind::ConcatFusion {
                text_mixer,
                speech_mixer,
                granularity,
                branch,
            } => {
                let text = self.text_input(feats)?;
                let speech = self.speech_input(feats, *granularity)?;
                let text_vec = masked_mean(&text_mixer.mix(&text.stack)?, &text.mask)?;
                let speech_vec = masked_mean(&speech_mixer.mix(&speech.stack)?, &speech.mask)?;
                let fused = concat(&[text_vec, speech_vec])?;
                let logits = branch.forward_vec(&fused, p, mode, rng)?;
                Ok((logits, Vec::new()))
            }
        }
    }

    /// Deterministic eval-mode prediction.
    pub fn predict(&self, feats: &Features<T>) -> Result<Prediction<T>, ModelError> {
        let mut rng = crate::rng::seeded(0);
        let logits = self.forward(feats, Mode::Eval, &mut rng)?;
        Ok(Prediction::from_logits(logits.clone_value()))
    }

    /// Mean cross-entropy over a batch of utterances.
    pub fn batch_loss(
        &self,
        batch: &[(&Features<T>, usize)],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Var<T>, Vec<usize>), ModelError> {
        let mut logit_rows = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (feats, label) in batch {
            logit_rows.push(self.forward(feats, mode, rng)?);
            targets.push(*label);
        }
        let stacked = stack_rows(&logit_rows)?;
        let predictions = {
            let v = stacked.value();
            (0..v.shape()[0])
                .map(|r| {
                    let row = v.row(r);
                    let mut best = 0;
                    for (i, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect()
        };
        let loss = cross_entropy(&stacked, &targets)?;
        Ok((loss, predictions))
    }
}
