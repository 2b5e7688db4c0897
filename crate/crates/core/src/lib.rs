//! Isolated-word speech recognition.
//!
//! Audio is endpointed and turned into LPC-cepstral feature vectors
//! ([`frontend`]), mapped to discrete symbols by an LBG codebook ([`vq`]) and
//! scored against one left-to-right discrete HMM per vocabulary word
//! ([`hmm`], [`recognizer`]). [`lexicon`] maps result text to phonemes and
//! [`cli`] exposes the whole pipeline as a batch tool.

pub mod audio;
pub mod cli;
pub mod frontend;
pub mod hmm;
pub mod lexicon;
pub mod recognizer;
pub mod vq;

pub use audio::{AudioClip, AudioError, EndpointConfig};
pub use frontend::{FeatureSequence, FeatureVector, FrontendConfig, FrontendError, LpcResult};
pub use hmm::{Hmm, HmmConfig, HmmError, ObservationSequence};
pub use lexicon::{Lexicon, LexiconError, PhonemeToken};
pub use recognizer::{
    EvalReport, Recognition, Recognizer, RecognizerError, TrainConfig, TrainingCorpus, Vocabulary,
};
pub use vq::{Codebook, VqConfig, VqError};
