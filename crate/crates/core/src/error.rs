use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("taxonomy line {line}: {msg}")]
    TaxonomySyntax { line: usize, msg: String },
    #[error("taxonomy contains a cycle through node `{0}`")]
    Cycle(String),
    #[error("taxonomy has more than one root: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("taxonomy has no root")]
    NoRoot,
    #[error("taxonomy has no edges")]
    EmptyTree,
    #[error("node `{0}` appears as child of more than one parent")]
    DuplicateNode(String),
    #[error("class index {0} assigned more than once")]
    ClassAssignedTwice(usize),
    #[error("leaf `{0}` has no class index")]
    LeafWithoutClass(String),
    #[error("node `{0}` is not a leaf but has a class index")]
    ClassOnInternalNode(String),
    #[error("class entry names unknown node `{0}`")]
    UnknownNode(String),
    #[error("class indices must be contiguous from 0; missing {0}")]
    NonContiguousClasses(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("model too large for exact enumeration: {0}")]
    TooLarge(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label {label} outside the {classes} classes of the taxonomy")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("bad magic number {found} (expected {expected})")]
    BadMagic { found: u32, expected: u32 },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientExamples {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown protocol `{name}`; available: {available}")]
    UnknownProtocol { name: String, available: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
