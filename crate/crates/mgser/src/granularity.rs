//! Forced-alignment parsing, syllable derivation, frame-to-segment
//! pooling, and the learnable layer mixer applied to embedding stacks.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::diffcore::{self, DiffError, Scalar, Tensor, Var};

#[derive(Debug, Error)]
pub enum GranError {
    #[error("alignment parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("alignment validation error: {msg}")]
    Validation { msg: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Speech => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Modality::Speech),
            1 => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Speech => write!(f, "speech"),
            Modality::Text => write!(f, "text"),
        }
    }
}

/// Temporal resolution of an embedding sequence. `Frame` and `Wordpiece`
/// come straight from the encoders; the segment levels are pooled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    Frame,
    Phone,
    Syllable,
    Word,
    Wordpiece,
}

impl Granularity {
    pub fn code(self) -> u8 {
        match self {
            Granularity::Frame => 0,
            Granularity::Phone => 1,
            Granularity::Syllable => 2,
            Granularity::Word => 3,
            Granularity::Wordpiece => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Granularity::Frame),
            1 => Some(Granularity::Phone),
            2 => Some(Granularity::Syllable),
            3 => Some(Granularity::Word),
            4 => Some(Granularity::Wordpiece),
            _ => None,
        }
    }

    /// Short tag used in CLI granularity lists and report files.
    pub fn tag(self) -> &'static str {
        match self {
            Granularity::Frame => "F",
            Granularity::Phone => "P",
            Granularity::Syllable => "S",
            Granularity::Word => "W",
            Granularity::Wordpiece => "T",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "F" | "f" | "frame" => Some(Granularity::Frame),
            "P" | "p" | "phone" => Some(Granularity::Phone),
            "S" | "s" | "syllable" => Some(Granularity::Syllable),
            "W" | "w" | "word" => Some(Granularity::Word),
            _ => None,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Granularity::Frame => "frame",
            Granularity::Phone => "phone",
            Granularity::Syllable => "syllable",
            Granularity::Word => "word",
            Granularity::Wordpiece => "wordpiece",
        };
        write!(f, "{s}")
    }
}

/// Per-utterance stack of L layers x K positions x D dims for one
/// modality and granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredEmbedding {
    pub modality: Modality,
    pub granularity: Granularity,
    pub layers: usize,
    pub positions: usize,
    pub dim: usize,
    data: Vec<f32>,
}

impl LayeredEmbedding {
    pub fn new(
        modality: Modality,
        granularity: Granularity,
        layers: usize,
        positions: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, GranError> {
        if layers == 0 || positions == 0 || dim == 0 {
            return Err(GranError::Validation {
                msg: format!("stack extents must be positive, got L={layers} K={positions} D={dim}"),
            });
        }
        if data.len() != layers * positions * dim {
            return Err(GranError::Validation {
                msg: format!(
                    "stack data length {} does not match L*K*D = {}",
                    data.len(),
                    layers * positions * dim
                ),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GranError::Validation {
                msg: "stack contains non-finite values".into(),
            });
        }
        Ok(LayeredEmbedding {
            modality,
            granularity,
            layers,
            positions,
            dim,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Frame vector at (layer, position).
    pub fn vector(&self, layer: usize, position: usize) -> &[f32] {
        let off = (layer * self.positions + position) * self.dim;
        &self.data[off..off + self.dim]
    }

    /// The full [L, K, D] stack as a tensor in the requested precision.
    pub fn stack_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::new(vec![self.layers, self.positions, self.dim], data)
            .expect("stack invariant guarantees matching extents")
    }
}

/// Half-open frame span [start, end) carrying a unit label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    Phone,
    Word,
    Syllable,
}

impl Tier {
    fn name(self) -> &'static str {
        match self {
            Tier::Phone => "phone",
            Tier::Word => "word",
            Tier::Syllable => "syllable",
        }
    }
}

/// Per-utterance phone/word(/syllable) tiers with frame boundaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentTiers {
    pub utterance_id: String,
    pub stride_ms: u32,
    pub phones: Vec<Segment>,
    pub words: Vec<Segment>,
    pub syllables: Option<Vec<Segment>>,
}

pub const DEFAULT_STRIDE_MS: u32 = 20;

fn validate_tier(tier: &str, segments: &[Segment]) -> Result<(), GranError> {
    for pair in segments.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(GranError::Validation {
                msg: format!(
                    "{tier} tier: segment [{}, {}) overlaps or precedes [{}, {})",
                    pair[1].start, pair[1].end, pair[0].start, pair[0].end
                ),
            });
        }
    }
    Ok(())
}

/// Parse an alignment file. Segments reaching past `frame_count` are
/// clipped with a warning; segments starting at or past it are dropped.
pub fn parse_alignment(
    text: &str,
    frame_count: usize,
) -> Result<(AlignmentTiers, Vec<String>), GranError> {
    let mut stride_ms = DEFAULT_STRIDE_MS;
    let mut phones = Vec::new();
    let mut words = Vec::new();
    let mut syllables: Option<Vec<Segment>> = None;
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("stride_ms") {
                stride_ms = v.trim().parse().map_err(|_| GranError::Parse {
                    line: line_no,
                    msg: format!("invalid stride_ms value {:?}", v.trim()),
                })?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(GranError::Parse {
                line: line_no,
                msg: format!("expected `<tier> <start> <end> <label>`, got {:?}", line),
            });
        }
        let tier = match fields[0] {
            "phone" => Tier::Phone,
            "word" => Tier::Word,
            "syllable" => Tier::Syllable,
            other => {
                return Err(GranError::Parse {
                    line: line_no,
                    msg: format!("unknown tier {other:?}"),
                })
            }
        };
        let start: usize = fields[1].parse().map_err(|_| GranError::Parse {
            line: line_no,
            msg: format!("invalid start frame {:?}", fields[1]),
        })?;
        let mut end: usize = fields[2].parse().map_err(|_| GranError::Parse {
            line: line_no,
            msg: format!("invalid end frame {:?}", fields[2]),
        })?;
        if end <= start {
            return Err(GranError::Validation {
                msg: format!(
                    "line {line_no}: empty segment [{start}, {end}) in {} tier",
                    tier.name()
                ),
            });
        }
        if start >= frame_count {
            warnings.push(format!(
                "line {line_no}: segment [{start}, {end}) starts past frame count {frame_count}, dropped"
            ));
            continue;
        }
        if end > frame_count {
            warnings.push(format!(
                "line {line_no}: segment end {end} clipped to frame count {frame_count}"
            ));
            end = frame_count;
        }
        let seg = Segment {
            start,
            end,
            label: fields[3].to_string(),
        };
        match tier {
            Tier::Phone => phones.push(seg),
            Tier::Word => words.push(seg),
            Tier::Syllable => syllables.get_or_insert_with(Vec::new).push(seg),
        }
    }

    validate_tier("phone", &phones)?;
    validate_tier("word", &words)?;
    if let Some(s) = &syllables {
        validate_tier("syllable", s)?;
    }
    Ok((
        AlignmentTiers {
            utterance_id: String::new(),
            stride_ms,
            phones,
            words,
            syllables,
        },
        warnings,
    ))
}

/// Inverse of `parse_alignment`; `parse(serialize(t))` reproduces `t`.
pub fn serialize_alignment(tiers: &AlignmentTiers) -> String {
    let mut out = String::new();
    out.push_str(&format!("#stride_ms {}\n", tiers.stride_ms));
    let mut write = |name: &str, segs: &[Segment]| {
        for s in segs {
            out.push_str(&format!("{name} {} {} {}\n", s.start, s.end, s.label));
        }
    };
    write("phone", &tiers.phones);
    write("word", &tiers.words);
    if let Some(s) = &tiers.syllables {
        write("syllable", s);
    }
    out
}

/// ARPABET vowel labels; stress digits are stripped before lookup.
pub fn arpabet_vowels() -> BTreeSet<String> {
    [
        "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn is_vowel(label: &str, vowels: &BTreeSet<String>) -> bool {
    let core = label.trim_end_matches(|c: char| c.is_ascii_digit());
    vowels.contains(&core.to_ascii_uppercase())
}

/// Group one word's phones into syllables: one vowel nucleus per
/// syllable, inter-nucleus consonants attach to the following nucleus,
/// leading consonants join the first syllable and trailing join the last.
/// A vowel-free word becomes a single syllable.
pub fn syllabify(phones: &[Segment], vowels: &BTreeSet<String>) -> Vec<Segment> {
    if phones.is_empty() {
        return Vec::new();
    }
    let nuclei: Vec<usize> = phones
        .iter()
        .enumerate()
        .filter(|(_, p)| is_vowel(&p.label, vowels))
        .map(|(i, _)| i)
        .collect();
    let make = |from: usize, to: usize| Segment {
        start: phones[from].start,
        end: phones[to].end,
        label: phones[from..=to]
            .iter()
            .map(|p| p.label.as_str())
            .collect::<Vec<_>>()
            .join("_"),
    };
    if nuclei.is_empty() {
        return vec![make(0, phones.len() - 1)];
    }
    let mut out = Vec::with_capacity(nuclei.len());
    let mut from = 0;
    for (j, &n) in nuclei.iter().enumerate() {
        let to = if j + 1 == nuclei.len() {
            phones.len() - 1
        } else {
            n
        };
        out.push(make(from, to));
        from = to + 1;
    }
    out
}

/// Derive a syllable tier from the phone tier, grouping phones by the
/// word segment that contains them. Phones outside every word are grouped
/// into maximal contiguous runs and syllabified as pseudo-words.
pub fn derive_syllable_tier(tiers: &AlignmentTiers, vowels: &BTreeSet<String>) -> Vec<Segment> {
    let mut groups: Vec<Vec<Segment>> = Vec::new();
    let mut orphan: Vec<Segment> = Vec::new();
    let mut word_groups: Vec<Vec<Segment>> = vec![Vec::new(); tiers.words.len()];
    for p in &tiers.phones {
        let owner = tiers
            .words
            .iter()
            .position(|w| p.start >= w.start && p.start < w.end);
        match owner {
            Some(i) => word_groups[i].push(p.clone()),
            None => {
                if let Some(last) = orphan.last() {
                    if p.start != last.end {
                        groups.push(std::mem::take(&mut orphan));
                    }
                }
                orphan.push(p.clone());
            }
        }
    }
    if !orphan.is_empty() {
        groups.push(orphan);
    }
    let mut all: Vec<Segment> = Vec::new();
    for g in word_groups.into_iter().chain(groups) {
        all.extend(syllabify(&g, vowels));
    }
    all.sort_by_key(|s| s.start);
    all
}

/// Mean-pool frame vectors over each segment span, per layer. Output
/// positions are the segments, in order; L and D are unchanged.
pub fn pool_segments(
    frames: &LayeredEmbedding,
    segments: &[Segment],
    out_granularity: Granularity,
) -> Result<LayeredEmbedding, GranError> {
    if segments.is_empty() {
        return Err(GranError::Validation {
            msg: "cannot pool an empty segmentation".into(),
        });
    }
    for s in segments {
        if s.is_empty() || s.end > frames.positions {
            return Err(GranError::Validation {
                msg: format!(
                    "segment [{}, {}) out of range for {} frames",
                    s.start, s.end, frames.positions
                ),
            });
        }
    }
    let (l, d) = (frames.layers, frames.dim);
    let mut data = Vec::with_capacity(l * segments.len() * d);
    for layer in 0..l {
        for seg in segments {
            let inv = 1.0 / seg.len() as f32;
            let mut acc = vec![0.0f32; d];
            for f in seg.start..seg.end {
                for (a, &v) in acc.iter_mut().zip(frames.vector(layer, f)) {
                    *a += v;
                }
            }
            data.extend(acc.iter().map(|a| a * inv));
        }
    }
    LayeredEmbedding::new(
        frames.modality,
        out_granularity,
        l,
        segments.len(),
        d,
        data,
    )
}

/// Learnable layer-mixing weights plus layer-norm parameters; one
/// independent instance per granularity/modality.
pub struct LayerMixer<T: Scalar> {
    pub weights: Var<T>,
    pub ln_gain: Var<T>,
    pub ln_bias: Var<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> LayerMixer<T> {
    /// Register mixer parameters under `prefix`. Weights start at 1
    /// (uniform average), gain at 1, bias at 0.
    pub fn new(store: &mut crate::diffcore::ParamStore<T>, prefix: &str, layers: usize, dim: usize) -> Self {
        LayerMixer {
            weights: store.add(format!("{prefix}.layer_weights"), Tensor::full(&[layers], T::one())),
            ln_gain: store.add(format!("{prefix}.ln_gain"), Tensor::full(&[dim], T::one())),
            ln_bias: store.add(format!("{prefix}.ln_bias"), Tensor::zeros(&[dim])),
        }
    }

    /// u_k = LN( sum_l w_l u_k^l / sum_l w_l ) for each position k.
    pub fn mix(&self, stack: &Tensor<T>) -> Result<Var<T>, GranError> {
        let mixed = diffcore::layer_mix(stack, &self.weights)?;
        Ok(diffcore::layer_norm(
            &mixed,
            &self.ln_gain,
            &self.ln_bias,
            LAYER_NORM_EPS,
        )?)
    }
}
