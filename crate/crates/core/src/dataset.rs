//! In-memory corpus: per-recording acoustic layers, token embeddings and
//! token frame spans, turned into classifier inputs per strategy.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use ndarray::Array2;

use crate::alignment::{align_tokens, frame_resolution, read_timing_file, FrameSpan, TimedWord};
use crate::classifier::{LabeledSequence, Sequence};
use crate::error::{Error, Result};
use crate::evaluation::split::{SplitItem, StratumKey};
use crate::fusion::build_fused;
use crate::labels::{Label, Sex};
use crate::synthgen::{SynthParams, SynthRecording};
use crate::tensorio::{ContainerKind, EmbeddingContainer, Manifest, RecordingManifestEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub label: Label,
    pub sex: Sex,
    pub corpus_id: String,
    /// Frames × audio_dim per layer.
    pub acoustic: BTreeMap<u8, Array2<f32>>,
    /// Tokens × text_dim.
    pub text: Array2<f32>,
    /// One span per token row of `text`.
    pub token_spans: Vec<FrameSpan>,
}

impl Recording {
    /// Aligns `words` to the acoustic frame grid and checks shapes.
    pub fn new(
        entry: (&str, Label, Sex, &str),
        acoustic: BTreeMap<u8, Array2<f32>>,
        text: Array2<f32>,
        words: &[TimedWord],
        duration_s: f64,
    ) -> Result<Self> {
        let (recording_id, label, sex, corpus_id) = entry;
        let frames = match acoustic.values().next() {
            Some(m) => m.nrows(),
            None => return Err(Error::Validation(format!("{recording_id}: no acoustic layers"))),
        };
        if acoustic.values().any(|m| m.nrows() != frames) {
            return Err(Error::Validation(format!("{recording_id}: layers disagree on frame count")));
        }
        let res = frame_resolution(duration_s, frames)?;
        let alignment = align_tokens(words, res, frames)?;
        if alignment.token_spans.len() != text.nrows() {
            return Err(Error::Validation(format!(
                "{recording_id}: timing lists {} tokens, text container has {}",
                alignment.token_spans.len(),
                text.nrows()
            )));
        }
        if alignment.degenerate_words > 0 {
            warn!(
                "{recording_id}: {} words too short for all their tokens",
                alignment.degenerate_words
            );
        }
        Ok(Recording {
            recording_id: recording_id.to_string(),
            label,
            sex,
            corpus_id: corpus_id.to_string(),
            acoustic,
            text,
            token_spans: alignment.token_spans,
        })
    }

    pub fn frames(&self) -> usize {
        self.acoustic.values().next().map_or(0, |m| m.nrows())
    }

    pub fn fused(&self, layer: u8) -> Result<Array2<f32>> {
        let acoustic = self.layer(layer)?;
        Ok(build_fused(acoustic.view(), self.text.view(), &self.token_spans)?.matrix)
    }

    pub fn layer(&self, layer: u8) -> Result<&Array2<f32>> {
        self.acoustic
            .get(&layer)
            .ok_or_else(|| Error::Validation(format!("{}: layer {layer} missing", self.recording_id)))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub recordings: Vec<Recording>,
}

fn read_kind(path: &std::path::Path, kind: ContainerKind) -> Result<EmbeddingContainer> {
    let c = EmbeddingContainer::read_file(path)?;
    if c.kind != kind {
        return Err(Error::Validation(format!(
            "{}: expected a {kind:?} container, found {:?}",
            path.display(),
            c.kind
        )));
    }
    Ok(c)
}

fn load_entry(manifest: &Manifest, entry: &RecordingManifestEntry, layers: &BTreeSet<u8>) -> Result<Recording> {
    let mut acoustic = BTreeMap::new();
    let mut duration = None;
    for (&layer, path) in &entry.acoustic_paths {
        if !layers.contains(&layer) {
            continue;
        }
        let c = read_kind(&manifest.resolve(path), ContainerKind::Acoustic)?;
        duration = duration.or(c.duration_s);
        acoustic.insert(layer, c.matrix()?);
    }
    let duration = duration.ok_or_else(|| {
        Error::Validation(format!("{}: acoustic containers carry no duration", entry.recording_id))
    })?;
    let text = read_kind(&manifest.resolve(&entry.text_path), ContainerKind::Text)?.matrix()?;
    let words = read_timing_file(manifest.resolve(&entry.timing_path))?;
    Recording::new(
        (&entry.recording_id, entry.label, entry.sex, &entry.corpus_id),
        acoustic,
        text,
        &words,
        duration,
    )
}

impl Dataset {
    /// Reads the requested layers (all when `None`) of every recording.
    /// Recordings lacking a requested layer are kept; sequences for that
    /// layer are unavailable (see [`Dataset::has_layer`]).
    pub fn load(manifest: &Manifest, layers: Option<&[u8]>) -> Result<Self> {
        let wanted: BTreeSet<u8> = match layers {
            Some(l) => l.iter().copied().collect(),
            None => manifest.layers(),
        };
        let recordings = manifest
            .entries
            .iter()
            .map(|e| load_entry(manifest, e, &wanted))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { recordings })
    }

    pub fn from_synth(recordings: Vec<SynthRecording>, params: &SynthParams) -> Result<Self> {
        let recordings = recordings
            .into_iter()
            .map(|r| {
                let acoustic = r
                    .acoustic
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| (i as u8 + 1, m))
                    .collect();
                Recording::new(
                    (&r.recording_id, r.label, r.sex, &r.corpus_id),
                    acoustic,
                    r.text,
                    &r.words,
                    params.duration_s(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { recordings })
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.recordings.iter().map(|r| r.label).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.recordings.iter().map(|r| r.recording_id.as_str()).collect()
    }

    /// Layers present for every recording.
    pub fn layers(&self) -> BTreeSet<u8> {
        let mut iter = self.recordings.iter();
        let Some(first) = iter.next() else {
            return BTreeSet::new();
        };
        let mut common: BTreeSet<u8> = first.acoustic.keys().copied().collect();
        for r in iter {
            common.retain(|l| r.acoustic.contains_key(l));
        }
        common
    }

    pub fn has_layer(&self, layer: u8) -> bool {
        !self.is_empty() && self.recordings.iter().all(|r| r.acoustic.contains_key(&layer))
    }

    pub fn split_items(&self) -> Vec<SplitItem> {
        self.recordings
            .iter()
            .map(|r| SplitItem {
                recording_id: r.recording_id.clone(),
                stratum: StratumKey {
                    label: r.label,
                    sex: r.sex,
                    corpus_id: r.corpus_id.clone(),
                },
            })
            .collect()
    }

    fn labelled(&self, build: impl Fn(&Recording) -> Result<Sequence>) -> Result<Vec<LabeledSequence>> {
        self.recordings
            .iter()
            .map(|r| {
                Ok(LabeledSequence {
                    sequence: build(r)?,
                    label: r.label,
                })
            })
            .collect()
    }

    pub fn acoustic_sequences(&self, layer: u8) -> Result<Vec<LabeledSequence>> {
        self.labelled(|r| Ok(Sequence::from_f32(r.layer(layer)?)))
    }

    /// Token sequences. A recording without tokens becomes a single zero
    /// row so that it still receives a (content-free) prediction.
    pub fn text_sequences(&self) -> Result<Vec<LabeledSequence>> {
        self.labelled(|r| {
            if r.text.nrows() == 0 {
                warn!("{}: no tokens; using a single empty token", r.recording_id);
                return Ok(Sequence::new(Array2::zeros((1, r.text.ncols()))));
            }
            Ok(Sequence::from_f32(&r.text))
        })
    }

    pub fn fused_sequences(&self, layer: u8) -> Result<Vec<LabeledSequence>> {
        self.labelled(|r| Ok(Sequence::from_f32(&r.fused(layer)?)))
    }
}
