//! Class-conditional synthetic dataset generator. Stands in for the real
//! corpus and encoder outputs at desk scale: text stacks carry a class
//! signal that separates two of the four classes, speech stacks the other
//! two, so fusion models have something genuinely complementary to learn.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{
    io_err, serialize_manifest, write_stack, DataError, UtteranceRecord, NUM_CLASSES,
};
use crate::granularity::{
    arpabet_vowels, serialize_alignment, syllabify, AlignmentTiers, Granularity, LayeredEmbedding,
    Modality, Segment, DEFAULT_STRIDE_MS,
};
use crate::rng::{seeded, Rng};

/// Where the speech class signal lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Text separates classes {0,1} and merges {2,3}; speech mirrors
    /// this with constant per-word-segment offsets.
    Complementary,
    /// The speech signal exists only in per-syllable means: one class
    /// keeps a uniform sign per syllable, the other alternates sign
    /// frame-by-frame inside each syllable, so the frame-level
    /// distributions of the two speech-separated classes coincide.
    SegmentOnly,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Complementary => "complementary",
            Scheme::SegmentOnly => "segment_only",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "complementary" => Some(Scheme::Complementary),
            "segment_only" => Some(Scheme::SegmentOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n: usize,
    pub sessions: usize,
    pub layers: usize,
    pub dim: usize,
    /// Inclusive range of frames per phone.
    pub frames_per_phone: (usize, usize),
    /// Inclusive range of phones per word.
    pub phones_per_word: (usize, usize),
    /// Inclusive range of words per utterance.
    pub words_per_utt: (usize, usize),
    pub text_scale: f64,
    pub speech_scale: f64,
    pub noise: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 400,
            sessions: 5,
            layers: 12,
            dim: 32,
            frames_per_phone: (2, 4),
            phones_per_word: (2, 4),
            words_per_utt: (2, 5),
            text_scale: 1.0,
            speech_scale: 1.0,
            noise: 1.0,
            scheme: Scheme::Complementary,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        if self.n < self.sessions * NUM_CLASSES {
            return bad(format!(
                "n = {} too small: need at least sessions*classes = {}",
                self.n,
                self.sessions * NUM_CLASSES
            ));
        }
        if self.sessions == 0 || self.layers == 0 {
            return bad("sessions and layers must be positive".into());
        }
        if self.dim < 8 {
            return bad(format!("dim {} too small, need >= 8", self.dim));
        }
        for (lo, hi, name) in [
            (self.frames_per_phone, "frames_per_phone"),
            (self.phones_per_word, "phones_per_word"),
            (self.words_per_utt, "words_per_utt"),
        ]
        .map(|(r, n)| (r.0, r.1, n))
        {
            if lo == 0 || hi < lo {
                return bad(format!("invalid {name} range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    /// Per-class utterance counts mirroring the corpus imbalance
    /// 1103/1636/1084/1708, scaled to n, with every class getting at
    /// least one utterance per session.
    pub fn class_counts(&self) -> Vec<usize> {
        const WEIGHTS: [usize; NUM_CLASSES] = [1103, 1636, 1084, 1708];
        let total: usize = WEIGHTS.iter().sum();
        let mut counts: Vec<usize> = WEIGHTS
            .iter()
            .map(|&w| (self.n * w / total).max(self.sessions))
            .collect();
        // distribute the remainder deterministically, largest class first
        let mut assigned: usize = counts.iter().sum();
        let mut i = 3; // neutral is the largest class
        while assigned < self.n {
            counts[i % NUM_CLASSES] += 1;
            assigned += 1;
            i += 1;
        }
        while assigned > self.n {
            let j = counts
                .iter()
                .enumerate()
                .max_by_key(|(_, &c)| c)
                .map(|(j, _)| j)
                .unwrap();
            counts[j] -= 1;
            assigned -= 1;
        }
        counts
    }
}

const CONSONANTS: [&str; 8] = ["B", "D", "K", "M", "N", "S", "T", "L"];
const VOWELS: [&str; 6] = ["AA", "AE", "AH", "EH", "IY", "OW"];

struct Structure {
    phones: Vec<Segment>,
    words: Vec<Segment>,
    /// Phone index ranges per word, for syllabification.
    word_phone_ranges: Vec<(usize, usize)>,
    frames: usize,
}

fn gen_structure(cfg: &SynthConfig, rng: &mut Rng) -> Structure {
    let n_words = rng.gen_range(cfg.words_per_utt.0..=cfg.words_per_utt.1);
    let mut phones = Vec::new();
    let mut words = Vec::new();
    let mut word_phone_ranges = Vec::new();
    let mut frame = 0usize;
    for w in 0..n_words {
        let n_phones = rng.gen_range(cfg.phones_per_word.0..=cfg.phones_per_word.1);
        let word_start = frame;
        let phone_lo = phones.len();
        for p in 0..n_phones {
            let n_frames = rng.gen_range(cfg.frames_per_phone.0..=cfg.frames_per_phone.1);
            // consonant/vowel alternation, vowels on odd positions
            let label = if p % 2 == 1 {
                VOWELS[rng.gen_range(0..VOWELS.len())]
            } else {
                CONSONANTS[rng.gen_range(0..CONSONANTS.len())]
            };
            phones.push(Segment {
                start: frame,
                end: frame + n_frames,
                label: label.to_string(),
            });
            frame += n_frames;
        }
        words.push(Segment {
            start: word_start,
            end: frame,
            label: format!("w{w}"),
        });
        word_phone_ranges.push((phone_lo, phones.len()));
    }
    Structure {
        phones,
        words,
        word_phone_ranges,
        frames: frame,
    }
}

/// Class mean direction: a constant bump on one of eight coordinate
/// blocks. Text uses blocks 0-2, speech blocks 3-5.
fn class_block(dim: usize, block: usize, amplitude: f64) -> Vec<f32> {
    let bs = dim / 8;
    let mut v = vec![0.0f32; dim];
    for x in v.iter_mut().skip(block * bs).take(bs) {
        *x = amplitude as f32;
    }
    v
}

fn text_mean(cfg: &SynthConfig, class: usize) -> Vec<f32> {
    let block = match class {
        0 => 0,
        1 => 1,
        _ => 2, // classes 2 and 3 are indistinguishable from text
    };
    class_block(cfg.dim, block, cfg.text_scale)
}

fn speech_mean(cfg: &SynthConfig, class: usize) -> Vec<f32> {
    let block = match class {
        2 => 3,
        3 => 4,
        _ => 5, // classes 0 and 1 are indistinguishable from speech
    };
    class_block(cfg.dim, block, cfg.speech_scale)
}

fn noise_stack(cfg: &SynthConfig, positions: usize, rng: &mut Rng) -> Vec<f32> {
    let n = cfg.layers * positions * cfg.dim;
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (cfg.noise * z) as f32
        })
        .collect()
}

fn add_offset(data: &mut [f32], cfg: &SynthConfig, positions: usize, range: (usize, usize), offset: &[f32], sign: f32) {
    for layer in 0..cfg.layers {
        for k in range.0..range.1 {
            let off = (layer * positions + k) * cfg.dim;
            for (x, &o) in data[off..off + cfg.dim].iter_mut().zip(offset) {
                *x += sign * o;
            }
        }
    }
}

fn gen_utterance(
    cfg: &SynthConfig,
    class: usize,
    rng: &mut Rng,
) -> Result<(LayeredEmbedding, LayeredEmbedding, AlignmentTiers), DataError> {
    let s = gen_structure(cfg, rng);

    // text stack: one wordpiece per word, class mean on every position
    let n_words = s.words.len();
    let mut text_data = noise_stack(cfg, n_words, rng);
    let tmean = text_mean(cfg, class);
    add_offset(&mut text_data, cfg, n_words, (0, n_words), &tmean, 1.0);

    // speech stack
    let mut speech_data = noise_stack(cfg, s.frames, rng);
    match cfg.scheme {
        Scheme::Complementary => {
            let smean = speech_mean(cfg, class);
            for w in &s.words {
                let jitter = 1.0 + 0.3 * rng.gen_range(-1.0..1.0);
                let v: Vec<f32> = smean.iter().map(|&m| m * jitter as f32).collect();
                add_offset(&mut speech_data, cfg, s.frames, (w.start, w.end), &v, 1.0);
            }
        }
        Scheme::SegmentOnly => {
            if class >= 2 {
                let v = class_block(cfg.dim, 3, cfg.speech_scale);
                let vowels = arpabet_vowels();
                let mut syl_index = 0usize;
                for &(lo, hi) in &s.word_phone_ranges {
                    for syl in syllabify(&s.phones[lo..hi], &vowels) {
                        if class == 2 {
                            // uniform sign across the syllable
                            let sign = if syl_index % 2 == 0 { 1.0 } else { -1.0 };
                            add_offset(&mut speech_data, cfg, s.frames, (syl.start, syl.end), &v, sign);
                        } else {
                            // alternating sign inside the syllable: same
                            // frame multiset, near-zero syllable mean
                            for f in syl.start..syl.end {
                                let sign = if (f - syl.start) % 2 == 0 { 1.0 } else { -1.0 };
                                add_offset(&mut speech_data, cfg, s.frames, (f, f + 1), &v, sign);
                            }
                        }
                        syl_index += 1;
                    }
                }
            }
        }
    }

    let text = LayeredEmbedding::new(
        Modality::Text,
        Granularity::Wordpiece,
        cfg.layers,
        n_words,
        cfg.dim,
        text_data,
    )?;
    let speech = LayeredEmbedding::new(
        Modality::Speech,
        Granularity::Frame,
        cfg.layers,
        s.frames,
        cfg.dim,
        speech_data,
    )?;
    let tiers = AlignmentTiers {
        utterance_id: String::new(),
        stride_ms: DEFAULT_STRIDE_MS,
        phones: s.phones,
        words: s.words,
        syllables: None,
    };
    Ok((speech, text, tiers))
}

/// Generate a dataset on disk: stacks, alignments, and a manifest.
/// Byte-identical for identical configs.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf, DataError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let counts = cfg.class_counts();
    let mut rng = seeded(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n);
    let mut index = 0usize;
    for (class, &count) in counts.iter().enumerate() {
        for i in 0..count {
            let id = format!("u{index:04}");
            let session = format!("S{}", 1 + i % cfg.sessions);
            let (speech, text, mut tiers) = gen_utterance(cfg, class, &mut rng)?;
            tiers.utterance_id = id.clone();
            let speech_path = PathBuf::from(format!("{id}_speech.mgef"));
            let text_path = PathBuf::from(format!("{id}_text.mgef"));
            let align_path = PathBuf::from(format!("{id}_align.txt"));
            write_stack(&out_dir.join(&speech_path), &speech)?;
            write_stack(&out_dir.join(&text_path), &text)?;
            let ap = out_dir.join(&align_path);
            fs::write(&ap, serialize_alignment(&tiers)).map_err(|e| io_err(&ap, e))?;
            records.push(UtteranceRecord {
                utterance_id: id,
                session,
                label: class,
                speech_stack_path: speech_path,
                text_stack_path: text_path,
                alignment_path: align_path,
            });
            index += 1;
        }
    }
    let manifest = out_dir.join("manifest.tsv");
    fs::write(&manifest, serialize_manifest(&records)).map_err(|e| io_err(&manifest, e))?;
    Ok(manifest)
}
