//! Making conversational-search answers self-contained.
//!
//! The crate links entity mentions in an answer, scores how salient each
//! entity is for understanding it, looks up short definitions, and rewrites
//! the answer either with inline definitions or with a follow-up offer. It
//! also carries the agreement and significance statistics used to evaluate
//! salience annotations and rewrite preferences.

pub mod analytics;
pub mod corpus;
pub mod dialogue;
pub mod kb;
pub mod linker;
pub mod pipeline;
pub mod rewriter;
pub mod salience;
pub mod text;

pub use corpus::{Conversation, PreferenceAnnotation, RewriteOption, SalienceAnnotation, Turn, TurnKey};
pub use kb::{Definition, KnowledgeBase};
pub use linker::{EntityMention, SurfaceFormDictionary};
pub use pipeline::{Pipeline, PipelineOptions};
pub use rewriter::{RewriteConfig, RewriteResult, Strategy};
