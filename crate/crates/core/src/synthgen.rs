//! Synthetic multimodal corpus with controllable cross-modal redundancy.
//!
//! Each recording has three latent vectors: content `c`, style `s` and a
//! nuisance `z`, all standard normal in `latent_dim` dimensions. The label
//! depends on `c[0] + s[0]`, so neither modality alone determines it.
//!
//! Word `w` carries content `e_w = c + τ·σ·ξ_w`. Its tokens embed as
//! `C·(e_w + σ_t·σ·η) + σ·ε`, with `η` shared across the recording. An
//! acoustic frame inside word `w` at layer `l` is
//! `A·s + B·(ρ_l·e_w + (1 − ρ_l)·λ·z) + σ·ε`; silent frames drop the `e_w`
//! term. `ρ_l` ramps linearly over the layers, so deep layers duplicate the
//! text channel while shallow layers carry only style plus nuisance.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{write_timing_file, TimedWord, WordTiming};
use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::labels::{Label, Sex, NUM_CLASSES};
use crate::rng::{derive_seed, stream_rng};
use crate::tensorio::{EmbeddingContainer, Manifest, RecordingManifestEntry, MAX_LAYER};

const PROJECTION_STREAM: u64 = 0;
const DEMOGRAPHY_STREAM: u64 = 1;
const LATENT_STREAM: u64 = 2;
const WORD_STREAM: u64 = 3;
const TEXT_STREAM: u64 = 4;
const ACOUSTIC_STREAM_BASE: u64 = 16;

/// Class counts, male counts and age (mean, sd) of the reference cohort.
const COHORT: [(f64, f64, f64, f64); NUM_CLASSES] = [
    (929.0, 388.0, 74.9, 8.4),
    (134.0, 66.0, 72.5, 7.3),
    (566.0, 239.0, 75.9, 8.3),
];

const CORPORA: [&str; 3] = ["synth_a", "synth_b", "synth_c"];

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_recordings: usize,
    /// CN, MCI, ADRD; normalized before use.
    pub class_proportions: [f64; NUM_CLASSES],
    /// Acoustic frames per recording.
    pub frames: usize,
    /// Inclusive range of words per recording.
    pub min_words: usize,
    pub max_words: usize,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub layers: u8,
    /// Redundancy at the first and last layer.
    pub rho_min: f64,
    pub rho_max: f64,
    pub noise_sigma: f64,
    pub latent_dim: usize,
    /// Spread of word content around the recording content (τ).
    pub content_spread: f64,
    /// Recording-level text distortion (σ_t).
    pub text_distortion: f64,
    /// Scale of the nuisance term in the acoustic stream (λ).
    pub nuisance_scale: f64,
    /// Range of the fraction of frames covered by words.
    pub min_speech_fraction: f64,
    pub max_speech_fraction: f64,
    /// Seconds per frame.
    pub frame_step: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let total: f64 = COHORT.iter().map(|c| c.0).sum();
        SynthParams {
            n_recordings: 600,
            class_proportions: COHORT.map(|c| c.0 / total),
            frames: 150,
            min_words: 10,
            max_words: 20,
            audio_dim: 32,
            text_dim: 32,
            layers: MAX_LAYER,
            rho_min: 0.0,
            rho_max: 1.0,
            noise_sigma: 1.0,
            latent_dim: 4,
            content_spread: 2.0,
            text_distortion: 0.2,
            nuisance_scale: 3.0,
            min_speech_fraction: 0.6,
            max_speech_fraction: 0.8,
            frame_step: 0.02,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let arg = |msg: String| Err(Error::Argument(msg));
        if self.n_recordings == 0 || self.frames == 0 || self.audio_dim == 0 || self.text_dim == 0 {
            return arg("recordings, frames and dimensions must be at least 1".into());
        }
        if self.latent_dim == 0 {
            return arg("latent_dim must be at least 1".into());
        }
        if self.layers == 0 || self.layers > MAX_LAYER {
            return arg(format!("layers must be in 1..={MAX_LAYER}"));
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if self.class_proportions.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 0.01 {
            return arg(format!("class proportions {:?} are not on the simplex", self.class_proportions));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return arg(format!("bad word range {}..={}", self.min_words, self.max_words));
        }
        if self.max_words > self.frames {
            return arg(format!(
                "{} words cannot be packed into {} frames",
                self.max_words, self.frames
            ));
        }
        for (name, rho) in [("rho_min", self.rho_min), ("rho_max", self.rho_max)] {
            if !(0.0..=1.0).contains(&rho) {
                return arg(format!("{name} {rho} outside [0, 1]"));
            }
        }
        let scales = [
            ("noise_sigma", self.noise_sigma),
            ("content_spread", self.content_spread),
            ("text_distortion", self.text_distortion),
            ("nuisance_scale", self.nuisance_scale),
        ];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return arg(format!("{name} must be finite and ≥ 0"));
            }
        }
        if !(0.0 < self.min_speech_fraction
            && self.min_speech_fraction <= self.max_speech_fraction
            && self.max_speech_fraction <= 1.0)
        {
            return arg("speech fractions must satisfy 0 < min ≤ max ≤ 1".into());
        }
        if !(self.frame_step > 0.0 && self.frame_step.is_finite()) {
            return arg("frame_step must be > 0".into());
        }
        Ok(())
    }

    /// Redundancy of a 1-based layer.
    pub fn rho(&self, layer: u8) -> f64 {
        if self.layers == 1 {
            return self.rho_min;
        }
        let t = (layer - 1) as f64 / (self.layers - 1) as f64;
        self.rho_min + (self.rho_max - self.rho_min) * t
    }

    pub fn class_counts(&self) -> Result<[usize; NUM_CLASSES]> {
        let counts = largest_remainder(self.n_recordings, &self.class_proportions)?;
        Ok([counts[0], counts[1], counts[2]])
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 * self.frame_step
    }
}

/// Ground truth for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub content: Vec<f64>,
    pub style: Vec<f64>,
    pub nuisance: Vec<f64>,
}

impl Latents {
    /// The ordinal score the label is derived from.
    pub fn score(&self) -> f64 {
        self.content[0] + self.style[0]
    }
}

/// The label rule: argmax of three affine scores `(0, u − θ₁, 2u − θ₁ − θ₂)`
/// in `u = c[0] + s[0]`, equivalent to thresholding `u` at `θ₁ ≤ θ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub thresholds: [f64; 2],
}

impl LabelRule {
    pub fn scores(&self, latents: &Latents) -> [f64; NUM_CLASSES] {
        let u = latents.score();
        let [t1, t2] = self.thresholds;
        [0.0, u - t1, 2.0 * u - t1 - t2]
    }

    pub fn label(&self, latents: &Latents) -> Label {
        let s = self.scores(latents);
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if s[i] > s[best] {
                best = i;
            }
        }
        Label::ALL[best]
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecording {
    pub recording_id: String,
    pub label: Label,
    pub sex: Sex,
    pub age: f64,
    pub corpus_id: String,
    pub latents: Latents,
    pub words: Vec<TimedWord>,
    pub tokens: Vec<String>,
    /// Tokens × text_dim.
    pub text: Array2<f32>,
    /// One frames × audio_dim matrix per layer, layer 1 first.
    pub acoustic: Vec<Array2<f32>>,
}

#[derive(Debug, Clone, Copy)]
struct Demographics {
    label: Label,
    sex: Sex,
}

/// Corpus-level state; recordings are generated independently from it.
pub struct Generator {
    params: SynthParams,
    rule: LabelRule,
    latents: Vec<Latents>,
    demographics: Vec<Demographics>,
    a: Array2<f64>,
    b: Array2<f64>,
    c: Array2<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn recording_id(index: usize) -> String {
    format!("rec{:05}", index + 1)
}

impl Generator {
    pub fn new(params: SynthParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_recordings;
        let k = params.latent_dim;
        let mut proj = stream_rng(params.seed, PROJECTION_STREAM);
        let a = gaussian_matrix(&mut proj, params.audio_dim, k);
        let b = gaussian_matrix(&mut proj, params.audio_dim, k);
        let c = gaussian_matrix(&mut proj, params.text_dim, k);

        let latents: Vec<Latents> = (0..n)
            .map(|i| {
                let mut rng = stream_rng(derive_seed(&[params.seed, i as u64]), LATENT_STREAM);
                Latents {
                    content: gaussian_vec(&mut rng, k),
                    style: gaussian_vec(&mut rng, k),
                    nuisance: gaussian_vec(&mut rng, k),
                }
            })
            .collect();

        // Labels by rank of the score, so class counts are exact.
        let counts = params.class_counts()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| latents[i].score().total_cmp(&latents[j].score()).then(i.cmp(&j)));
        let mut labels = vec![Label::CN; n];
        let mut offset = 0;
        for (class, &count) in counts.iter().enumerate() {
            for &i in &order[offset..offset + count] {
                labels[i] = Label::ALL[class];
            }
            offset += count;
        }
        let boundary = |pos: usize| -> f64 {
            let score = |p: usize| latents[order[p.min(n - 1)]].score();
            if pos == 0 {
                score(0) - 1.0
            } else if pos >= n {
                score(n - 1) + 1.0
            } else {
                0.5 * (score(pos - 1) + score(pos))
            }
        };
        let rule = LabelRule {
            thresholds: [boundary(counts[0]), boundary(counts[0] + counts[1])],
        };

        // Sex within each class follows the reference cohort's ratio.
        let mut demo_rng = stream_rng(params.seed, DEMOGRAPHY_STREAM);
        let mut sexes = vec![Sex::F; n];
        for (class, cohort) in COHORT.iter().enumerate() {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i].index() == class).collect();
            members.shuffle(&mut demo_rng);
            let split = largest_remainder(members.len(), &[cohort.1, cohort.0 - cohort.1])?;
            for &i in &members[..split[0]] {
                sexes[i] = Sex::M;
            }
        }
        let demographics = labels
            .iter()
            .zip(&sexes)
            .map(|(&label, &sex)| Demographics { label, sex })
            .collect();

        Ok(Generator {
            params,
            rule,
            latents,
            demographics,
            a,
            b,
            c,
        })
    }

    pub fn params(&self) -> &SynthParams {
        &self.params
    }

    pub fn label_rule(&self) -> LabelRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.params.n_recordings
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generates recording `index` (0-based); depends only on the corpus
    /// seed and the index.
    pub fn recording(&self, index: usize) -> Result<SynthRecording> {
        let p = &self.params;
        if index >= p.n_recordings {
            return Err(Error::Argument(format!("recording {index} out of range")));
        }
        let seed = derive_seed(&[p.seed, index as u64]);
        let latents = self.latents[index].clone();
        let demo = self.demographics[index];
        let mut demo_rng = stream_rng(seed, DEMOGRAPHY_STREAM);
        let (_, _, age_mean, age_sd) = COHORT[demo.label.index()];
        let age: f64 = demo_rng.sample(Normal::new(age_mean, age_sd).expect("valid sd"));
        let age = (age * 10.0).round() / 10.0;
        let corpus_id = CORPORA[demo_rng.gen_range(0..CORPORA.len())].to_string();

        let mut word_rng = stream_rng(seed, WORD_STREAM);
        let (word_spans, words, tokens) = self.words(&mut word_rng)?;

        // word content e_w
        let k = p.latent_dim;
        let sigma = p.noise_sigma;
        let mut content_rng = stream_rng(seed, TEXT_STREAM);
        let contents: Vec<Vec<f64>> = word_spans
            .iter()
            .map(|_| {
                latents
                    .content
                    .iter()
                    .map(|&c| c + p.content_spread * sigma * content_rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        let distortion: Vec<f64> = gaussian_vec(&mut content_rng, k)
            .into_iter()
            .map(|v| v * p.text_distortion * sigma)
            .collect();
        let mut text = Array2::zeros((tokens.len(), p.text_dim));
        let mut row = 0;
        for (w, word) in words.iter().enumerate() {
            let shifted: Vec<f64> = contents[w].iter().zip(&distortion).map(|(e, d)| e + d).collect();
            let clean = mat_vec(&self.c, &shifted);
            for _ in &word.token_chars {
                for (j, v) in clean.iter().enumerate() {
                    let noise: f64 = content_rng.sample(StandardNormal);
                    text[[row, j]] = (v + sigma * noise) as f32;
                }
                row += 1;
            }
        }

        let style = mat_vec(&self.a, &latents.style);
        let nuisance = mat_vec(&self.b, &latents.nuisance);
        let word_content: Vec<Vec<f64>> = contents.iter().map(|e| mat_vec(&self.b, e)).collect();
        let mut frame_word = vec![None; p.frames];
        for (w, &(start, end)) in word_spans.iter().enumerate() {
            for slot in &mut frame_word[start..end] {
                *slot = Some(w);
            }
        }
        let mut acoustic = Vec::with_capacity(p.layers as usize);
        for layer in 1..=p.layers {
            let rho = p.rho(layer);
            let mut rng = stream_rng(seed, ACOUSTIC_STREAM_BASE + layer as u64);
            let mut m = Array2::zeros((p.frames, p.audio_dim));
            for (t, word) in frame_word.iter().enumerate() {
                for j in 0..p.audio_dim {
                    let mut v = style[j] + (1.0 - rho) * p.nuisance_scale * nuisance[j];
                    if let Some(w) = word {
                        v += rho * word_content[*w][j];
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    m[[t, j]] = (v + sigma * noise) as f32;
                }
            }
            acoustic.push(m);
        }

        Ok(SynthRecording {
            recording_id: recording_id(index),
            label: demo.label,
            sex: demo.sex,
            age,
            corpus_id,
            latents,
            words,
            tokens,
            text,
            acoustic,
        })
    }

    /// Word frame spans, timings and token strings for one recording.
    #[allow(clippy::type_complexity)]
    fn words(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<(usize, usize)>, Vec<TimedWord>, Vec<String>)> {
        let p = &self.params;
        let n = rng.gen_range(p.min_words..=p.max_words);
        let fraction = rng.gen_range(p.min_speech_fraction..=p.max_speech_fraction);
        let speech = ((fraction * p.frames as f64).round() as usize).clamp(n, p.frames);
        let word_weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let extra = largest_remainder(speech - n, &word_weights)?;
        let gap_weights: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let gaps = largest_remainder(p.frames - speech, &gap_weights)?;

        let mut spans = Vec::with_capacity(n);
        let mut words = Vec::with_capacity(n);
        let mut tokens = Vec::new();
        let mut frame = 0;
        for w in 0..n {
            frame += gaps[w];
            let (start, end) = (frame, frame + 1 + extra[w]);
            frame = end;
            spans.push((start, end));

            let len = rng.gen_range(2..=9);
            let word: String = (0..len)
                .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
                .collect();
            let token_chars = if len >= 6 {
                let head = len / 2;
                tokens.push(word[..head].to_string());
                tokens.push(format!("##{}", &word[head..]));
                vec![head, len - head]
            } else {
                tokens.push(word.clone());
                vec![len]
            };
            // a tenth of a frame inside the span, so timings map back exactly
            let timing = WordTiming::new(
                word,
                (start as f64 + 0.1) * p.frame_step,
                (end as f64 - 0.1) * p.frame_step,
            )?;
            words.push(TimedWord { timing, token_chars });
        }
        Ok((spans, words, tokens))
    }

    /// All recordings in memory. Prefer [`generate_corpus`] for large corpora.
    pub fn generate_all(&self) -> Result<Vec<SynthRecording>> {
        (0..self.len()).map(|i| self.recording(i)).collect()
    }
}

fn mat_vec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.rows().into_iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Ground truth written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentsFile {
    pub params: SynthParams,
    pub rule: LabelRule,
    pub recordings: Vec<RecordingLatents>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingLatents {
    pub recording_id: String,
    pub label: Label,
    #[serde(flatten)]
    pub latents: Latents,
}

impl LatentsFile {
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LATENTS_FILE: &str = "latents.json";

/// Writes a corpus under `dir`: per-layer acoustic containers, token
/// containers, timing files, `manifest.tsv` and `latents.json`. Returns the
/// manifest.
pub fn generate_corpus(params: &SynthParams, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let generator = Generator::new(params.clone())?;
    for sub in ["acoustic", "text", "timing"] {
        let path = dir.join(sub);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    let mut entries = Vec::with_capacity(generator.len());
    let mut truth = Vec::with_capacity(generator.len());
    for i in 0..generator.len() {
        let rec = generator.recording(i)?;
        let id = &rec.recording_id;
        let mut acoustic_paths = std::collections::BTreeMap::new();
        for (l, m) in rec.acoustic.iter().enumerate() {
            let layer = l as u8 + 1;
            let rel = PathBuf::from(format!("acoustic/{id}_L{layer:02}.mmf"));
            EmbeddingContainer::acoustic(m, layer, params.duration_s()).write_file(dir.join(&rel))?;
            acoustic_paths.insert(layer, rel);
        }
        let text_path = PathBuf::from(format!("text/{id}.mmf"));
        EmbeddingContainer::text(&rec.text).write_file(dir.join(&text_path))?;
        let timing_path = PathBuf::from(format!("timing/{id}.tsv"));
        write_timing_file(dir.join(&timing_path), &rec.words)?;
        entries.push(RecordingManifestEntry {
            recording_id: rec.recording_id.clone(),
            label: rec.label,
            sex: rec.sex,
            age: rec.age,
            corpus_id: rec.corpus_id.clone(),
            acoustic_paths,
            text_path,
            timing_path,
        });
        truth.push(RecordingLatents {
            recording_id: rec.recording_id,
            label: rec.label,
            latents: rec.latents,
        });
    }
    let manifest = Manifest {
        root: dir.to_path_buf(),
        entries,
    };
    manifest.write_file(dir.join(MANIFEST_FILE))?;
    let file = LatentsFile {
        params: params.clone(),
        rule: generator.label_rule(),
        recordings: truth,
    };
    let path = dir.join(LATENTS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
