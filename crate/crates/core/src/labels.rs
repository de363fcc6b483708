//! The eight-class building taxonomy and consolidation of wider vocabularies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Semantic class with fixed integer codes `0..=7`.
///
/// | code | class   |
/// |------|---------|
/// | 0    | ceiling |
/// | 1    | floor   |
/// | 2    | wall    |
/// | 3    | beam    |
/// | 4    | column  |
/// | 5    | window  |
/// | 6    | door    |
/// | 7    | clutter |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticClass {
    Ceiling = 0,
    Floor = 1,
    Wall = 2,
    Beam = 3,
    Column = 4,
    Window = 5,
    Door = 6,
    Clutter = 7,
}

pub const NUM_CLASSES: usize = 8;

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::Ceiling,
        SemanticClass::Floor,
        SemanticClass::Wall,
        SemanticClass::Beam,
        SemanticClass::Column,
        SemanticClass::Window,
        SemanticClass::Door,
        SemanticClass::Clutter,
    ];

    #[inline]
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Option<SemanticClass> {
        usize::try_from(code).ok().and_then(|c| Self::ALL.get(c).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Ceiling => "ceiling",
            SemanticClass::Floor => "floor",
            SemanticClass::Wall => "wall",
            SemanticClass::Beam => "beam",
            SemanticClass::Column => "column",
            SemanticClass::Window => "window",
            SemanticClass::Door => "door",
            SemanticClass::Clutter => "clutter",
        }
    }

    pub fn is_clutter(self) -> bool {
        self == SemanticClass::Clutter
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Never fails: unknown names consolidate to clutter.
impl FromStr for SemanticClass {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(consolidate_label(s))
    }
}

/// Maps any raw class name (e.g. the 13-class S3DIS vocabulary) onto the
/// eight-class taxonomy. The seven structural classes are kept; everything
/// else, including names never seen before, becomes clutter.
pub fn consolidate_label(raw_name: &str) -> SemanticClass {
    let name = raw_name.trim().to_ascii_lowercase();
    SemanticClass::ALL[..7]
        .iter()
        .copied()
        .find(|c| c.name() == name)
        .unwrap_or(SemanticClass::Clutter)
}
