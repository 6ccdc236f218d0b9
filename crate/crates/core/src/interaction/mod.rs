//! Command parsing and face identity matching.

pub mod face;
pub mod grammar;

pub use face::{calibrate_threshold, match_face, noisy_probe, Embedding, FaceGallery, FaceMatch, EMBEDDING_DIM};
pub use grammar::{compile_grammar, parse_command, Action, CommandGrammar, GrammarError, Intent, DEFAULT_GRAMMAR};
