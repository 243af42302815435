pub mod context;
pub mod docmodel;
pub mod error;
pub mod matching;
pub mod normalizer;
pub mod pipeline;
pub mod sectionizer;
pub mod sentencizer;
pub mod tabular;
pub mod target;
pub mod tokenizer;
pub mod visualizer;
