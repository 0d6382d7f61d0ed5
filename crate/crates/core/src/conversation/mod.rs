//! Conversation threads: the event model, the on-disk format, interaction
//! graph construction and early-detection truncation.

mod event;
pub mod format;
mod graph;
mod truncate;
pub mod twitter;

pub use event::{Corpus, Event, Label, LabelScheme, Post};
pub use format::{parse_events, write_events};
pub use graph::{build_graph, Direction, InteractionGraph, StructureVariant};
pub use truncate::{truncate, Cutoff};
