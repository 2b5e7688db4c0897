//! Command-line front end: `train`, `recognize`, `eval`, `gen-corpus` and `phonemes`.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::audio::{self, SYNTHETIC_CLASSES};
use crate::lexicon::{self, Lexicon, LexiconError};
use crate::recognizer::{
    self, default_words, RecognizerError, TrainConfig, TrainingCorpus, Vocabulary, MANIFEST_FILE,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "wordhmm", version, about = "Isolated-word recognizer: LPC cepstra, VQ and discrete HMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train word models from a corpus directory and write a model file.
    Train {
        corpus_dir: PathBuf,
        model_out: PathBuf,
        /// `section.key = value` file overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one setting, e.g. `--set hmm.states=6`. Applied after --config.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated word list; defaults to the words found in the corpus.
        #[arg(long, value_delimiter = ',')]
        vocab: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recognize WAV files and print `path<TAB>word<TAB>log_likelihood`.
    Recognize {
        model: PathBuf,
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
        /// Print the K best words per file.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        top: u64,
    },
    /// Evaluate a model on a labeled test corpus.
    Eval {
        model: PathBuf,
        test_dir: PathBuf,
        /// Add white Gaussian noise at this SNR (dB) before recognition.
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic corpus in the standard layout plus a manifest.
    GenCorpus {
        out_dir: PathBuf,
        #[arg(long, default_value_t = SYNTHETIC_CLASSES)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        speakers: u64,
        #[arg(long, default_value_t = 5)]
        attempts: u32,
        /// Id of the first speaker; use distinct ranges for disjoint train/test sets.
        #[arg(long, default_value_t = 0)]
        first_speaker: u64,
        #[arg(long, default_value_t = 8000)]
        rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Print the phonemes of a text, `|` between words.
    Phonemes {
        text: Vec<String>,
        /// Lexicon file with `word<TAB>PH PH PH` lines; defaults to the bundled one.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
}

/// Runs the tool with `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Train {
            corpus_dir,
            model_out,
            config,
            overrides,
            vocab,
            seed,
        } => cmd_train(&corpus_dir, &model_out, config.as_deref(), &overrides, vocab, seed, out),
        Command::Recognize { model, wavs, top } => cmd_recognize(&model, &wavs, top as usize, out, err),
        Command::Eval {
            model,
            test_dir,
            snr,
            seed,
            json,
        } => cmd_eval(&model, &test_dir, snr, seed, json.as_deref(), out, err),
        Command::GenCorpus {
            out_dir,
            classes,
            speakers,
            attempts,
            first_speaker,
            rate,
            seed,
            force,
        } => cmd_gen_corpus(
            &out_dir,
            &CorpusSpec {
                classes,
                speakers,
                attempts,
                first_speaker,
                rate,
                seed,
            },
            force,
            out,
        ),
        Command::Phonemes { text, lexicon } => cmd_phonemes(&text.join(" "), lexicon.as_deref(), out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration file

/// Parsed `section.key = value` settings, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliConfig {
    pub settings: Vec<Setting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    /// 1-based line number, or 0 for command-line overrides.
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl CliConfig {
    /// Parses a config file. Blank lines and `#` comments are skipped; keys are
    /// checked against the known settings.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut settings = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `section.key = value`", idx + 1);
            };
            let setting = Setting {
                line: idx + 1,
                key: key.trim().to_string(),
                value: value.trim().to_string(),
            };
            // validate eagerly so unknown keys report their line
            apply_setting(&mut TrainConfig::default(), &setting)?;
            settings.push(setting);
        }
        Ok(Self { settings })
    }

    pub fn apply(&self, cfg: &mut TrainConfig) -> anyhow::Result<()> {
        for s in &self.settings {
            apply_setting(cfg, s)?;
        }
        Ok(())
    }
}

fn apply_setting(cfg: &mut TrainConfig, s: &Setting) -> anyhow::Result<()> {
    let at = || {
        if s.line == 0 {
            format!("--set {}", s.key)
        } else {
            format!("config line {}", s.line)
        }
    };
    fn num<T: std::str::FromStr>(v: &str) -> Option<T> {
        v.parse().ok()
    }
    let bad_value = || anyhow::anyhow!("{}: invalid value '{}' for {}", at(), s.value, s.key);
    let v = s.value.as_str();
    let fe = &mut cfg.frontend.features;
    let ep = &mut cfg.frontend.endpoint;
    match s.key.as_str() {
        "frontend.preemphasis_alpha" => fe.preemphasis_alpha = num(v).ok_or_else(bad_value)?,
        "frontend.frame_len_ms" => fe.frame_len_ms = num(v).ok_or_else(bad_value)?,
        "frontend.shift_ms" => fe.shift_ms = num(v).ok_or_else(bad_value)?,
        "frontend.lpc_order" => fe.lpc_order = num(v).ok_or_else(bad_value)?,
        "frontend.cepstrum_order" => fe.cepstrum_order = num(v).ok_or_else(bad_value)?,
        "endpoint.frame_len_ms" => ep.frame_len_ms = num(v).ok_or_else(bad_value)?,
        "endpoint.shift_ms" => ep.shift_ms = num(v).ok_or_else(bad_value)?,
        "endpoint.threshold_ratio" => ep.threshold_ratio = num(v).ok_or_else(bad_value)?,
        "endpoint.margin_frames" => ep.margin_frames = num(v).ok_or_else(bad_value)?,
        "hmm.states" => cfg.hmm.states = num(v).ok_or_else(bad_value)?,
        "hmm.max_iters" => cfg.hmm.max_iters = num(v).ok_or_else(bad_value)?,
        "hmm.tol" => cfg.hmm.tol = num(v).ok_or_else(bad_value)?,
        "hmm.floor_a" => cfg.hmm.floor_a = num(v).ok_or_else(bad_value)?,
        "hmm.floor_b" => cfg.hmm.floor_b = num(v).ok_or_else(bad_value)?,
        "vq.size" => cfg.vq.size = num(v).ok_or_else(bad_value)?,
        "vq.max_iters" => cfg.vq.max_iters = num(v).ok_or_else(bad_value)?,
        "vq.tol" => cfg.vq.tol = num(v).ok_or_else(bad_value)?,
        other => bail!("{}: unknown key '{other}'", at()),
    }
    Ok(())
}

fn validate_train_config(cfg: &TrainConfig) -> anyhow::Result<()> {
    cfg.frontend
        .endpoint
        .validate()
        .map_err(anyhow::Error::msg)?;
    if cfg.hmm.states == 0 {
        bail!("hmm.states must be at least 1");
    }
    if cfg.vq.size == 0 || !cfg.vq.size.is_power_of_two() {
        bail!("vq.size must be a power of two");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_train(
    corpus_dir: &Path,
    model_out: &Path,
    config: Option<&Path>,
    overrides: &[String],
    vocab: Option<Vec<String>>,
    seed: u64,
    out: &mut dyn Write,
) -> anyhow::Result<u8> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        CliConfig::parse(&text)
            .with_context(|| path.display().to_string())?
            .apply(&mut cfg)?;
    }
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            bail!("--set expects SECTION.KEY=VALUE, got '{o}'");
        };
        apply_setting(
            &mut cfg,
            &Setting {
                line: 0,
                key: key.trim().to_string(),
                value: value.trim().to_string(),
            },
        )?;
    }
    validate_train_config(&cfg)?;

    let corpus = TrainingCorpus::from_dir(corpus_dir)?;
    let vocab = match vocab {
        Some(words) => Vocabulary::new(words)?,
        None => corpus.vocabulary()?,
    };
    let (model, summary) = recognizer::train_recognizer(&corpus, &vocab, &cfg, seed)?;
    let bytes = recognizer::save_model(&model);
    fs::write(model_out, bytes).with_context(|| format!("writing {}", model_out.display()))?;
    for w in &summary.words {
        writeln!(out, "{}\t{:.6}", w.word, w.final_log_likelihood)?;
    }
    Ok(EXIT_OK)
}

fn read_model(path: &Path) -> anyhow::Result<recognizer::Recognizer> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    recognizer::load_model(&bytes).with_context(|| path.display().to_string())
}

fn cmd_recognize(
    model: &Path,
    wavs: &[PathBuf],
    top: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<u8> {
    let model = read_model(model)?;
    let mut failed = false;
    for path in wavs {
        let outcome = fs::read(path)
            .map_err(|error| RecognizerError::Io {
                path: path.clone(),
                error,
            })
            .and_then(|bytes| Ok(audio::load_wav(&bytes)?))
            .and_then(|clip| recognizer::recognize(&model, &clip));
        match outcome {
            Ok(rec) => {
                for (word, ll) in rec.ranked.iter().take(top) {
                    writeln!(out, "{}\t{}\t{:.6}", path.display(), word, ll)?;
                }
                if rec.all_impossible {
                    writeln!(err, "{}\twarning: every word model scored -inf", path.display())?;
                }
            }
            Err(e) => {
                failed = true;
                writeln!(err, "{}\t{}", path.display(), e.root())?;
            }
        }
    }
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_eval(
    model: &Path,
    test_dir: &Path,
    snr: Option<f64>,
    seed: u64,
    json: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<u8> {
    let model = read_model(model)?;
    let test = TrainingCorpus::from_dir(test_dir)?;
    let report = recognizer::evaluate(&model, &test, snr, seed)?;
    write!(out, "{report}")?;
    for f in &report.failures {
        writeln!(err, "{}\t{}", f.source, f.error)?;
    }
    if let Some(path) = json {
        fs::write(path, report.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.failures.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}

/// Shape and seeding of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub classes: usize,
    pub speakers: u64,
    pub attempts: u32,
    pub first_speaker: u64,
    pub rate: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: SYNTHETIC_CLASSES,
            speakers: 5,
            attempts: 5,
            first_speaker: 0,
            rate: 8000,
            seed: 0,
        }
    }
}

fn attempt_seed(corpus_seed: u64, attempt: u32) -> u64 {
    corpus_seed
        .wrapping_mul(0x2545_F491_4F6C_DD1D)
        .wrapping_add(u64::from(attempt))
}

/// Writes `classes × speakers × attempts` synthetic tokens as
/// `<dir>/<word>/<speaker>_<attempt>.wav` and lists them in the manifest.
pub fn write_synthetic_corpus(dir: &Path, spec: &CorpusSpec) -> anyhow::Result<usize> {
    let words = default_words();
    if spec.classes == 0 || spec.classes > words.len() {
        bail!("--classes must be between 1 and {}", words.len());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = String::from("# path,word,speaker,attempt\n");
    let mut count = 0;
    for (class, word) in words.iter().enumerate().take(spec.classes) {
        let word_dir = dir.join(word);
        fs::create_dir_all(&word_dir).with_context(|| format!("creating {}", word_dir.display()))?;
        for speaker in spec.first_speaker..spec.first_speaker + spec.speakers {
            for attempt in 0..spec.attempts {
                let clip = audio::synthesize_word_token(
                    class,
                    speaker,
                    attempt_seed(spec.seed, attempt),
                    spec.rate,
                )?;
                let name = format!("{speaker}_{attempt}.wav");
                let path = word_dir.join(&name);
                fs::write(&path, audio::save_wav(&clip)).with_context(|| format!("writing {}", path.display()))?;
                manifest.push_str(&format!("{word}/{name},{word},{speaker},{attempt}\n"));
                count += 1;
            }
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(count)
}

fn cmd_gen_corpus(dir: &Path, spec: &CorpusSpec, force: bool, out: &mut dyn Write) -> anyhow::Result<u8> {
    if dir.exists() && !force {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty {
            bail!("{} is not empty (use --force to write into it)", dir.display());
        }
    }
    let n = write_synthetic_corpus(dir, spec)?;
    writeln!(out, "wrote {n} tokens to {}", dir.display())?;
    Ok(EXIT_OK)
}

fn cmd_phonemes(
    text: &str,
    lexicon_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<u8> {
    if text.trim().is_empty() {
        writeln!(err, "usage: wordhmm phonemes <TEXT>... [--lexicon PATH]")?;
        writeln!(err, "error: no text given")?;
        return Ok(EXIT_USAGE);
    }
    let lex = match lexicon_path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Lexicon::parse(&text).with_context(|| p.display().to_string())?
        }
        None => Lexicon::bundled(),
    };
    match lexicon::text_to_phonemes(text, &lex) {
        Ok(tokens) => {
            writeln!(out, "{}", lexicon::render(&tokens))?;
            Ok(EXIT_OK)
        }
        Err(LexiconError::OutOfVocabulary(words)) => {
            for w in words {
                writeln!(err, "OutOfVocabulary: {w}")?;
            }
            Ok(EXIT_FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}
