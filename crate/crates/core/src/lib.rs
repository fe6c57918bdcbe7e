//! Benchmark generation and evaluation for knowledge editing and unlearning.
//!
//! Hierarchical knowledge graphs ([`kg`]) are turned into four-choice probe
//! datasets ([`probegen`]); answer logs from models before and after an
//! intervention are scored into propagation and consistency metrics
//! ([`metrics`]); exported weight matrices are compared geometrically
//! ([`geometry`]). [`textgen`] wraps optional LLM assistance.

// Range checks are written negated so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fsutil;
pub mod geometry;
pub mod jsonl;
pub mod kg;
pub mod metrics;
pub mod probegen;
pub mod rng;
pub mod textgen;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Before or after the intervention. Used both for which model state produced an
/// answer and for which world state an item's key reflects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Pre, Phase::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
