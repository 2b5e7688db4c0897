//! Word-to-phoneme lookup for the text side of the speech interface.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexiconError {
    #[error("OutOfVocabulary: {}", .0.join(", "))]
    OutOfVocabulary(Vec<String>),
    #[error("empty input text")]
    EmptyText,
    #[error("lexicon line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Names used when a digit is read out.
pub const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

const DEFAULT_LEXICON: &str = "\
zero\tZ IH R OW
one\tW AH N
two\tT UW
three\tTH R IY
four\tF AO R
five\tF AY V
six\tS IH K S
seven\tS EH V AH N
eight\tEY T
nine\tN AY N
plus\tP L AH S
minus\tM AY N AH S
times\tT AY M Z
divided\tD IH V AY D IH D
by\tB AY
equals\tIY K W AH L Z
point\tP OY N T
";

/// Output unit of [`text_to_phonemes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhonemeToken {
    Phoneme(String),
    WordBoundary,
}

impl fmt::Display for PhonemeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhonemeToken::Phoneme(p) => f.write_str(p),
            PhonemeToken::WordBoundary => f.write_str("|"),
        }
    }
}

/// Pronunciation dictionary with lowercase keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// ARPAbet pronunciations for the digits, the arithmetic operators and a few
    /// words needed to read results aloud.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is well formed")
    }

    /// Parses `word<TAB>PH PH PH` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lex = Lexicon::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: &str| LexiconError::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let (word, phones) = line
                .split_once('\t')
                .ok_or_else(|| err("expected word<TAB>phonemes"))?;
            let word = word.trim();
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(err("word must be a single non-empty token"));
            }
            let phones: Vec<String> = phones.split_whitespace().map(str::to_string).collect();
            lex.insert(word, phones).map_err(|m| err(&m))?;
        }
        Ok(lex)
    }

    pub fn insert(&mut self, word: &str, phonemes: Vec<String>) -> Result<(), String> {
        if phonemes.is_empty() {
            return Err(format!("'{word}' has no phonemes"));
        }
        self.entries.insert(word.to_lowercase(), phonemes);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Splits text into lookup words. A token made only of digits is read one
/// digit at a time ("42" → "four", "two").
fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for token in text.split_whitespace() {
        let token = token.to_lowercase();
        if token.chars().all(|c| c.is_ascii_digit()) {
            out.extend(
                token
                    .bytes()
                    .map(|d| DIGIT_WORDS[usize::from(d - b'0')].to_string()),
            );
        } else {
            out.push(token);
        }
    }
    out
}

/// Converts text to phonemes with a boundary marker between words.
///
/// Every unknown word is reported at once.
pub fn text_to_phonemes(text: &str, lex: &Lexicon) -> Result<Vec<PhonemeToken>, LexiconError> {
    let words = words(text);
    if words.is_empty() {
        return Err(LexiconError::EmptyText);
    }
    let missing: Vec<String> = words
        .iter()
        .filter(|w| lex.get(w).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(LexiconError::OutOfVocabulary(missing));
    }
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(PhonemeToken::WordBoundary);
        }
        out.extend(
            lex.get(w)
                .into_iter()
                .flatten()
                .map(|p| PhonemeToken::Phoneme(p.clone())),
        );
    }
    Ok(out)
}

/// Renders phonemes space-separated, with `|` between words.
pub fn render(tokens: &[PhonemeToken]) -> String {
    tokens
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}
