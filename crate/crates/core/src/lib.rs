//! Terminology-constrained machine translation toolkit.
//!
//! The crate covers every stage of a four-step workflow: LLM-seeded bilingual
//! data generation ([`datagen`]), corpus filtering ([`filter`]) and quality
//! scoring ([`scorer`]), mixed fine-tuning data preparation ([`mixprep`]),
//! and terminology-constrained automatic post-editing ([`ape`]). Term-level
//! and sentence-level evaluation live in [`termcheck`] and [`eval`].
//!
//! All external services sit behind the traits in [`backends`], which also
//! ships deterministic mocks so the whole pipeline can run offline.

pub mod ape;
pub mod backends;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod filter;
pub mod jsonl;
pub mod lang;
pub mod mixprep;
pub mod record;
pub mod round;
pub mod scorer;
pub mod termcheck;

pub use error::{Error, Result};
pub use lang::LangCode;
pub use record::{BilingualPair, Origin, SegmentRecord, TermEntry, TermSet, TermSetLabel};
