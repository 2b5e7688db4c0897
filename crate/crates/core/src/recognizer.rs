//! The recognition unit: one HMM per vocabulary word over a shared VQ
//! codebook, trained from a corpus and scored by forward log-likelihood.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioClip, AudioError, EndpointConfig};
use crate::frontend::{self, FeatureSequence, FeatureVector, FrontendConfig, FrontendError};
use crate::hmm::{self, Hmm, HmmConfig, HmmError, ObservationSequence};
use crate::lexicon::DIGIT_WORDS;
use crate::vq::{self, Codebook, VqConfig, VqError};

/// Model file format written by this version.
pub const FORMAT_VERSION: u64 = 1;

/// Name of the optional corpus manifest inside a corpus directory.
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("MissingWordSamples: no training samples for '{0}'")]
    MissingWordSamples(String),
    #[error("UnknownWord: '{0}' is not in the recognizer vocabulary")]
    UnknownWord(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("{source_name}: {error}")]
    Sample {
        source_name: String,
        error: Box<RecognizerError>,
    },
    #[error("MalformedModelFile: {0}")]
    MalformedModelFile(String),
    #[error("UnsupportedVersion: model format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
}

impl RecognizerError {
    /// The error with any per-sample annotation stripped.
    pub fn root(&self) -> &RecognizerError {
        match self {
            RecognizerError::Sample { error, .. } => error.root(),
            other => other,
        }
    }

    fn in_sample(self, source_name: impl Into<String>) -> Self {
        RecognizerError::Sample {
            source_name: source_name.into(),
            error: Box::new(self),
        }
    }
}

pub type Result<T, E = RecognizerError> = std::result::Result<T, E>;

/// Ordered list of unique lowercase word labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words.is_empty() {
            return Err(RecognizerError::InvalidVocabulary("no words".into()));
        }
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || *w != w.to_lowercase() || w.contains(char::is_whitespace) {
                return Err(RecognizerError::InvalidVocabulary(format!(
                    "'{w}' must be a non-empty lowercase token"
                )));
            }
            if words[..i].contains(w) {
                return Err(RecognizerError::InvalidVocabulary(format!("duplicate '{w}'")));
            }
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }
}

impl Default for Vocabulary {
    /// Ten digits followed by "plus" and "minus".
    fn default() -> Self {
        Self {
            words: default_words().iter().map(|w| w.to_string()).collect(),
        }
    }
}

/// Labels of the twelve synthetic classes, in class order.
pub fn default_words() -> Vec<&'static str> {
    DIGIT_WORDS.iter().copied().chain(["plus", "minus"]).collect()
}

/// Where a corpus sample's audio comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    File(PathBuf),
    Clip(AudioClip),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub source: AudioSource,
    pub speaker: String,
    pub attempt: u32,
}

impl CorpusSample {
    pub fn name(&self) -> String {
        match &self.source {
            AudioSource::File(p) => p.display().to_string(),
            AudioSource::Clip(_) => format!("<clip speaker={} attempt={}>", self.speaker, self.attempt),
        }
    }

    pub fn load(&self) -> Result<AudioClip> {
        match &self.source {
            AudioSource::File(path) => {
                let bytes = fs::read(path).map_err(|error| RecognizerError::Io {
                    path: path.clone(),
                    error,
                })?;
                Ok(audio::load_wav(&bytes)?)
            }
            AudioSource::Clip(clip) => Ok(clip.clone()),
        }
    }
}

/// Labeled audio grouped by word, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCorpus {
    entries: IndexMap<String, Vec<CorpusSample>>,
}

impl TrainingCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, word: &str, sample: CorpusSample) {
        self.entries.entry(word.to_string()).or_default().push(sample);
    }

    pub fn add_clip(&mut self, word: &str, clip: AudioClip, speaker: impl Into<String>, attempt: u32) {
        self.add(
            word,
            CorpusSample {
                source: AudioSource::Clip(clip),
                speaker: speaker.into(),
                attempt,
            },
        );
    }

    /// Declares a word with no samples yet.
    pub fn add_word(&mut self, word: &str) {
        self.entries.entry(word.to_string()).or_default();
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn samples(&self, word: &str) -> &[CorpusSample] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every `(word, sample)` pair in corpus order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &CorpusSample)> {
        self.entries
            .iter()
            .flat_map(|(w, s)| s.iter().map(move |x| (w.as_str(), x)))
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vocabulary made of the corpus words in corpus order.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.words().map(str::to_string))
    }

    /// Loads `dir/manifest.txt` when present, else scans `dir/<word>/<speaker>_<attempt>.wav`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST_FILE);
        if manifest.is_file() {
            return Self::from_manifest(&manifest);
        }
        let io = |error| RecognizerError::Io {
            path: dir.to_path_buf(),
            error,
        };
        let mut word_dirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        word_dirs.sort();
        let mut corpus = Self::new();
        for wd in word_dirs {
            let word = wd
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| RecognizerError::InvalidCorpus(format!("bad directory name {}", wd.display())))?
                .to_string();
            corpus.add_word(&word);
            let mut files: Vec<PathBuf> = fs::read_dir(&wd)
                .map_err(|error| RecognizerError::Io {
                    path: wd.clone(),
                    error,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && p.extension()
                            .and_then(|e| e.to_str())
                            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                })
                .collect();
            files.sort();
            for f in files {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let (speaker, attempt) = match stem.rsplit_once('_') {
                    Some((s, a)) => match a.parse() {
                        Ok(a) => (s.to_string(), a),
                        Err(_) => (stem.to_string(), 0),
                    },
                    None => (stem.to_string(), 0),
                };
                corpus.add(
                    &word,
                    CorpusSample {
                        source: AudioSource::File(f),
                        speaker,
                        attempt,
                    },
                );
            }
        }
        Ok(corpus)
    }

    /// Reads a `path,word,speaker,attempt` manifest; relative paths are
    /// resolved against the manifest's directory.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|error| RecognizerError::Io {
            path: path.to_path_buf(),
            error,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut corpus = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| {
                RecognizerError::InvalidCorpus(format!("{}:{}: {m}", path.display(), idx + 1))
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [file, word, speaker, attempt] = fields[..] else {
                return Err(bad("expected path,word,speaker,attempt"));
            };
            let attempt: u32 = attempt.parse().map_err(|_| bad("attempt must be an integer"))?;
            if word.is_empty() {
                return Err(bad("empty word label"));
            }
            corpus.add(
                word,
                CorpusSample {
                    source: AudioSource::File(base.join(file)),
                    speaker: speaker.to_string(),
                    attempt,
                },
            );
        }
        Ok(corpus)
    }
}

/// Endpointing plus feature settings, persisted with the model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSettings {
    pub features: FrontendConfig,
    pub endpoint: EndpointConfig,
}

impl FrontendSettings {
    /// Endpoints a raw clip and converts it to features.
    pub fn features_for(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        let speech = audio::detect_endpoints(clip, &self.endpoint)?;
        Ok(frontend::extract_features(&speech, &self.features)?)
    }
}

/// Everything `train_recognizer` needs besides data and seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainConfig {
    pub frontend: FrontendSettings,
    pub hmm: HmmConfig,
    pub vq: VqConfig,
}

/// Trained, persistable recognizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recognizer {
    pub format_version: u64,
    pub frontend: FrontendSettings,
    pub codebook: Codebook,
    #[serde(rename = "words")]
    pub word_models: IndexMap<String, Hmm>,
}

/// Per-word diagnostics from training.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTraining {
    pub word: String,
    pub samples: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub degenerate_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub codebook_distortion: f64,
    pub words: Vec<WordTraining>,
}

fn word_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Trains one shared codebook on the pooled features of every word, then one
/// Bakis HMM per word with Baum-Welch.
pub fn train_recognizer(
    corpus: &TrainingCorpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Recognizer, TrainingSummary)> {
    for w in vocab.words() {
        if corpus.samples(w).is_empty() {
            return Err(RecognizerError::MissingWordSamples(w.clone()));
        }
    }

    let jobs: Vec<(usize, &CorpusSample)> = vocab
        .words()
        .iter()
        .enumerate()
        .flat_map(|(wi, w)| corpus.samples(w).iter().map(move |s| (wi, s)))
        .collect();
    let features: Vec<(usize, FeatureSequence)> = jobs
        .par_iter()
        .map(|&(wi, sample)| {
            let clip = sample.load().map_err(|e| e.in_sample(sample.name()))?;
            let fs = cfg
                .frontend
                .features_for(&clip)
                .map_err(|e| e.in_sample(sample.name()))?;
            Ok((wi, fs))
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<FeatureVector> = features
        .iter()
        .flat_map(|(_, fs)| fs.vectors.iter().cloned())
        .collect();
    let (codebook, trace) =
        vq::train_codebook_traced(&pooled, cfg.vq.size, seed, cfg.vq.max_iters, cfg.vq.tol)?;

    let mut per_word: Vec<Vec<ObservationSequence>> = vec![Vec::new(); vocab.len()];
    for (wi, fs) in &features {
        per_word[*wi].push(vq::quantize_sequence(&codebook, fs)?);
    }

    let hcfg = cfg.hmm;
    let m = codebook.size();
    let trained: Vec<(Hmm, WordTraining)> = per_word
        .par_iter()
        .enumerate()
        .map(|(wi, seqs)| {
            let init = hmm::init_left_right(hcfg.states, m, word_seed(seed, wi));
            let r = hmm::baum_welch(&init, seqs, hcfg.max_iters, hcfg.tol, hcfg.floor_b, hcfg.floor_a)?;
            let info = WordTraining {
                word: vocab.words()[wi].clone(),
                samples: seqs.len(),
                iterations: r.iterations,
                final_log_likelihood: r.log_likelihoods.last().copied().unwrap_or(f64::NAN),
                degenerate_states: r.degenerate_states,
            };
            Ok((r.model, info))
        })
        .collect::<Result<_>>()?;

    let mut word_models = IndexMap::new();
    let mut words = Vec::new();
    for (model, info) in trained {
        word_models.insert(info.word.clone(), model);
        words.push(info);
    }
    let recognizer = Recognizer {
        format_version: FORMAT_VERSION,
        frontend: cfg.frontend,
        codebook,
        word_models,
    };
    let summary = TrainingSummary {
        codebook_distortion: trace.final_distortion().unwrap_or(0.0),
        words,
    };
    Ok((recognizer, summary))
}

/// Ranked word hypotheses for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    /// `(word, ln P(O|λ_word))`, best first; ties keep vocabulary order.
    pub ranked: Vec<(String, f64)>,
    /// Every model scored `-inf`.
    pub all_impossible: bool,
}

impl Recognition {
    pub fn best(&self) -> &str {
        &self.ranked[0].0
    }
}

impl Recognizer {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            words: self.word_models.keys().cloned().collect(),
        }
    }

    /// Scores an already quantized observation sequence against every word model.
    pub fn score(&self, obs: &ObservationSequence) -> Result<Recognition> {
        let mut ranked: Vec<(String, f64)> = self
            .word_models
            .iter()
            .map(|(w, h)| Ok((w.clone(), hmm::log_likelihood(h, obs)?)))
            .collect::<Result<_>>()?;
        // stable sort keeps vocabulary order among equal scores
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let all_impossible = ranked.iter().all(|(_, ll)| *ll == f64::NEG_INFINITY);
        Ok(Recognition {
            ranked,
            all_impossible,
        })
    }

    pub fn observations(&self, clip: &AudioClip) -> Result<ObservationSequence> {
        let fs = self.frontend.features_for(clip)?;
        Ok(vq::quantize_sequence(&self.codebook, &fs)?)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.word_models.is_empty() {
            return Err("no word models".into());
        }
        Vocabulary::new(self.word_models.keys().cloned()).map_err(|e| e.to_string())?;
        for (w, h) in &self.word_models {
            if h.n_symbols() != self.codebook.size() {
                return Err(format!(
                    "model '{w}' has {} symbols but the codebook has {}",
                    h.n_symbols(),
                    self.codebook.size()
                ));
            }
        }
        if self.codebook.dim() != self.frontend.features.cepstrum_order {
            return Err(format!(
                "codebook dimension {} does not match cepstrum order {}",
                self.codebook.dim(),
                self.frontend.features.cepstrum_order
            ));
        }
        self.frontend.endpoint.validate()?;
        Ok(())
    }
}

/// Full pipeline: endpoint, features, quantize, score every word model.
pub fn recognize(r: &Recognizer, clip: &AudioClip) -> Result<Recognition> {
    let obs = r.observations(clip)?;
    r.score(&obs)
}

/// Top-1 tallies over a labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Row/column labels of the confusion matrix.
    pub labels: Vec<String>,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for words without test samples.
    pub per_word_accuracy: IndexMap<String, Option<f64>>,
    /// Samples that could not be recognized, with the reason. Not counted in `total`.
    pub failures: Vec<EvalFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalFailure {
    pub source: String,
    pub word: String,
    pub error: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    /// Accuracy summary, per-word accuracy and the confusion matrix as aligned text.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy: {:.4} ({}/{})",
            self.accuracy, self.correct, self.total
        )?;
        let width = self.labels.iter().map(String::len).max().unwrap_or(4).max(5);
        writeln!(f, "per-word accuracy:")?;
        for (w, acc) in &self.per_word_accuracy {
            match acc {
                Some(a) => writeln!(f, "  {w:<width$}  {a:.4}")?,
                None => writeln!(f, "  {w:<width$}  n/a")?,
            }
        }
        writeln!(f, "confusion (rows = true, columns = predicted):")?;
        let cell = self
            .confusion
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(self.labels.iter().map(String::len).max().unwrap_or(1));
        write!(f, "  {:<width$}", "")?;
        for l in &self.labels {
            write!(f, " {l:>cell$}")?;
        }
        writeln!(f)?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            write!(f, "  {l:<width$}")?;
            for c in row {
                write!(f, " {c:>cell$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn sample_noise_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)
}

/// Recognizes every test sample, optionally after adding white noise at
/// `noise_snr_db`, and tallies the top-1 decisions.
pub fn evaluate(
    r: &Recognizer,
    test: &TrainingCorpus,
    noise_snr_db: Option<f64>,
    seed: u64,
) -> Result<EvalReport> {
    let labels: Vec<String> = r.word_models.keys().cloned().collect();
    for w in test.words() {
        if !labels.iter().any(|l| l == w) {
            return Err(RecognizerError::UnknownWord(w.to_string()));
        }
    }
    let jobs: Vec<(&str, &CorpusSample)> = test.iter().collect();
    let outcomes: Vec<Result<String>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (_, sample))| {
            let mut clip = sample.load()?;
            if let Some(snr) = noise_snr_db {
                clip = audio::add_noise(&clip, snr, sample_noise_seed(seed, i))?;
            }
            Ok(recognize(r, &clip)?.best().to_string())
        })
        .collect();

    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut failures = Vec::new();
    for ((word, sample), outcome) in jobs.iter().zip(outcomes) {
        let truth = labels.iter().position(|l| l == word).expect("checked above");
        match outcome {
            Ok(pred) => {
                let p = labels.iter().position(|l| *l == pred).expect("model word");
                confusion[truth][p] += 1;
            }
            Err(e) => failures.push(EvalFailure {
                source: sample.name(),
                word: word.to_string(),
                error: e.to_string(),
            }),
        }
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_word_accuracy = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let n: usize = confusion[i].iter().sum();
            let acc = (n > 0).then(|| confusion[i][i] as f64 / n as f64);
            (l.clone(), acc)
        })
        .collect();
    Ok(EvalReport {
        labels,
        total,
        correct,
        accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        confusion,
        per_word_accuracy,
        failures,
    })
}

/// Serializes a recognizer as canonical pretty-printed JSON.
pub fn save_model(r: &Recognizer) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(r).expect("recognizer serializes");
    out.push(b'\n');
    out
}

pub fn load_model(bytes: &[u8]) -> Result<Recognizer> {
    let malformed = |m: String| RecognizerError::MalformedModelFile(m);
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| malformed("missing format_version".into()))?
        .as_u64()
        .ok_or_else(|| malformed("format_version is not a non-negative integer".into()))?;
    if version != FORMAT_VERSION {
        return Err(RecognizerError::UnsupportedVersion(version));
    }
    let r: Recognizer = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    r.validate().map_err(malformed)?;
    Ok(r)
}
