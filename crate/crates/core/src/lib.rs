//! Evidence extraction from clinical trial abstracts.
//!
//! The pipeline runs per document: sentence segmentation and abbreviation expansion,
//! an RCT gate, PICO span tagging, evidence sentence classification, outcome-anchored
//! ICO assembly with direction inference, and concept normalization. Extracted
//! findings are aggregated into intervention by outcome evidence maps and served
//! over HTTP.

pub mod abbrev;
pub mod classify;
pub mod corpus;
pub mod text;
pub mod trie;
pub mod gate;
pub mod normalize;
pub mod pico;
pub mod evidence;
pub mod eval;
pub mod evidence_map;
pub mod service;
