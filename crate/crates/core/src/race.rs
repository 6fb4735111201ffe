//! The four race categories and fixed-size per-race containers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Race label. The derived ordering is the canonical order used everywhere
/// (tie-breaks, column order, array indexing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaceCategory {
    African,
    Asian,
    Caucasian,
    Indian,
}

impl RaceCategory {
    pub const ALL: [RaceCategory; 4] = [
        RaceCategory::African,
        RaceCategory::Asian,
        RaceCategory::Caucasian,
        RaceCategory::Indian,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RaceCategory::African => "african",
            RaceCategory::Asian => "asian",
            RaceCategory::Caucasian => "caucasian",
            RaceCategory::Indian => "indian",
        }
    }

    /// Three-letter tag used in CSV column names.
    pub fn short(self) -> &'static str {
        match self {
            RaceCategory::African => "afr",
            RaceCategory::Asian => "asi",
            RaceCategory::Caucasian => "cau",
            RaceCategory::Indian => "ind",
        }
    }
}

impl fmt::Display for RaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RaceCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "african" | "afr" | "afn" => Ok(RaceCategory::African),
            "asian" | "asi" => Ok(RaceCategory::Asian),
            "caucasian" | "cau" | "cauc" => Ok(RaceCategory::Caucasian),
            "indian" | "ind" => Ok(RaceCategory::Indian),
            other => Err(Error::InvalidArgument(format!("unknown race {other:?}"))),
        }
    }
}
