//! Embedding-stack codec, dataset manifest, loading, and the synthetic
//! dataset generator.

mod synth;

pub use synth::{generate_synthetic, Scheme, SynthConfig};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::granularity::{
    derive_syllable_tier, parse_alignment, pool_segments, arpabet_vowels, AlignmentTiers,
    GranError, Granularity, LayeredEmbedding, Modality,
};
use crate::models::{Features, ModelSpec, SeqInput};

pub const CLASS_NAMES: [&str; 4] = ["angry", "happy", "sad", "neutral"];
pub const NUM_CLASSES: usize = 4;

pub fn label_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == name)
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("codec error at offset {offset}: {msg}")]
    Codec { offset: usize, msg: String },
    #[error("manifest parse error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Gran(#[from] GranError),
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

pub(crate) fn io_err(path: &Path, source: io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- embedding stack codec --------------------------------------------

const STACK_MAGIC: &[u8; 4] = b"MGEF";
const STACK_VERSION: u16 = 1;

/// Fixed header size of the stack format, in bytes.
pub const STACK_HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4 + 4;

pub fn encode_stack(stack: &LayeredEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(STACK_HEADER_LEN + stack.data().len() * 4);
    out.extend_from_slice(STACK_MAGIC);
    out.extend_from_slice(&STACK_VERSION.to_le_bytes());
    out.push(stack.modality.code());
    out.push(stack.granularity.code());
    out.extend_from_slice(&(stack.layers as u32).to_le_bytes());
    out.extend_from_slice(&(stack.positions as u32).to_le_bytes());
    out.extend_from_slice(&(stack.dim as u32).to_le_bytes());
    for &v in stack.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_stack(bytes: &[u8]) -> Result<LayeredEmbedding, DataError> {
    let codec = |offset: usize, msg: String| DataError::Codec { offset, msg };
    let need = |offset: usize, n: usize| {
        if offset + n > bytes.len() {
            Err(codec(
                bytes.len(),
                format!("truncated: need {} bytes at offset {offset}", n),
            ))
        } else {
            Ok(&bytes[offset..offset + n])
        }
    };
    if need(0, 4)? != STACK_MAGIC {
        return Err(codec(0, "bad magic, expected MGEF".into()));
    }
    let version = u16::from_le_bytes(need(4, 2)?.try_into().unwrap());
    if version != STACK_VERSION {
        return Err(codec(4, format!("unsupported version {version}")));
    }
    let modality = Modality::from_code(need(6, 1)?[0])
        .ok_or_else(|| codec(6, format!("unknown modality code {}", bytes[6])))?;
    let granularity = Granularity::from_code(need(7, 1)?[0])
        .ok_or_else(|| codec(7, format!("unknown granularity code {}", bytes[7])))?;
    let l = u32::from_le_bytes(need(8, 4)?.try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(need(12, 4)?.try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(need(16, 4)?.try_into().unwrap()) as usize;
    let count = l
        .checked_mul(k)
        .and_then(|x| x.checked_mul(d))
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| codec(8, format!("dimension overflow: L={l} K={k} D={d}")))?;
    let payload = need(STACK_HEADER_LEN, count)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LayeredEmbedding::new(modality, granularity, l, k, d, data)
        .map_err(|e| codec(STACK_HEADER_LEN, e.to_string()))
}

pub fn read_stack(path: &Path) -> Result<LayeredEmbedding, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_stack(&bytes)
}

pub fn write_stack(path: &Path, stack: &LayeredEmbedding) -> Result<(), DataError> {
    fs::write(path, encode_stack(stack)).map_err(|e| io_err(path, e))
}

// ---- manifest ----------------------------------------------------------

/// One dataset row: identity, session, class label, and the three file
/// paths (relative to the manifest's directory).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub session: String,
    pub label: usize,
    pub speech_stack_path: PathBuf,
    pub text_stack_path: PathBuf,
    pub alignment_path: PathBuf,
}

pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceRecord>, DataError> {
    let mut records: Vec<UtteranceRecord> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(DataError::Manifest {
                line: line_no,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let label = label_index(fields[2]).ok_or_else(|| DataError::Manifest {
            line: line_no,
            msg: format!("unknown label {:?}; expected one of {:?}", fields[2], CLASS_NAMES),
        })?;
        if records.iter().any(|r| r.utterance_id == fields[0]) {
            return Err(DataError::Manifest {
                line: line_no,
                msg: format!("duplicate utterance id {:?}", fields[0]),
            });
        }
        records.push(UtteranceRecord {
            utterance_id: fields[0].to_string(),
            session: fields[1].to_string(),
            label,
            speech_stack_path: PathBuf::from(fields[3]),
            text_stack_path: PathBuf::from(fields[4]),
            alignment_path: PathBuf::from(fields[5]),
        });
    }
    Ok(records)
}

pub fn serialize_manifest(records: &[UtteranceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.utterance_id,
            r.session,
            CLASS_NAMES[r.label],
            r.speech_stack_path.display(),
            r.text_stack_path.display(),
            r.alignment_path.display(),
        ));
    }
    out
}

// ---- dataset loading ---------------------------------------------------

/// A fully loaded utterance: raw stacks plus alignment tiers.
pub struct LoadedUtterance {
    pub record: UtteranceRecord,
    pub text: LayeredEmbedding,
    pub speech_frame: LayeredEmbedding,
    pub tiers: AlignmentTiers,
}

impl LoadedUtterance {
    pub fn label(&self) -> usize {
        self.record.label
    }

    pub fn session(&self) -> &str {
        &self.record.session
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Vec<LoadedUtterance>, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let records = parse_manifest(&text)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    records
        .into_iter()
        .map(|record| {
            let speech_frame = read_stack(&root.join(&record.speech_stack_path))?;
            let text_stack = read_stack(&root.join(&record.text_stack_path))?;
            let align_path = root.join(&record.alignment_path);
            let align_text = fs::read_to_string(&align_path).map_err(|e| io_err(&align_path, e))?;
            let (mut tiers, _warnings) = parse_alignment(&align_text, speech_frame.positions)?;
            tiers.utterance_id = record.utterance_id.clone();
            Ok(LoadedUtterance {
                record,
                text: text_stack,
                speech_frame,
                tiers,
            })
        })
        .collect()
}

/// Segment-level stack for one granularity. Returns the stack and whether
/// the syllable tier had to be derived by the syllabifier fallback.
pub fn segment_stack(
    utt: &LoadedUtterance,
    granularity: Granularity,
) -> Result<(LayeredEmbedding, bool), DataError> {
    match granularity {
        Granularity::Frame => Ok((utt.speech_frame.clone(), false)),
        Granularity::Wordpiece => Ok((utt.text.clone(), false)),
        Granularity::Phone => Ok((
            pool_segments(&utt.speech_frame, &utt.tiers.phones, Granularity::Phone)?,
            false,
        )),
        Granularity::Word => Ok((
            pool_segments(&utt.speech_frame, &utt.tiers.words, Granularity::Word)?,
            false,
        )),
        Granularity::Syllable => match &utt.tiers.syllables {
            Some(s) => Ok((
                pool_segments(&utt.speech_frame, s, Granularity::Syllable)?,
                false,
            )),
            None => {
                let derived = derive_syllable_tier(&utt.tiers, &arpabet_vowels());
                Ok((
                    pool_segments(&utt.speech_frame, &derived, Granularity::Syllable)?,
                    true,
                ))
            }
        },
    }
}

/// Assemble the feature set a model spec needs for one utterance.
pub fn prepare_features(
    utt: &LoadedUtterance,
    spec: &ModelSpec,
) -> Result<Features<f32>, DataError> {
    let text = if spec.use_text {
        Some(SeqInput::full(utt.text.stack_tensor::<f32>()))
    } else {
        None
    };
    let mut speech = Vec::with_capacity(spec.granularities.len());
    for &g in &spec.granularities {
        let (stack, _fallback) = segment_stack(utt, g)?;
        speech.push((g, SeqInput::full(stack.stack_tensor::<f32>())));
    }
    Ok(Features { text, speech })
}
