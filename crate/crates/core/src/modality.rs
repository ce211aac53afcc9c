use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// A scoring channel. `Structure`, `Image` and `Text` carry entity data;
/// `Joint` is the attention-fused combination of the enabled base modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Structure,
    Image,
    Text,
    Joint,
}

impl Modality {
    pub const BASE: [Modality; 3] = [Modality::Structure, Modality::Image, Modality::Text];
    pub const FEATURE: [Modality; 2] = [Modality::Image, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Structure => "structure",
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Joint => "joint",
        }
    }

    pub fn is_base(self) -> bool {
        self != Modality::Joint
    }

    /// Image and text come from precomputed feature files.
    pub fn has_features(self) -> bool {
        matches!(self, Modality::Image | Modality::Text)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "structure" | "structural" | "s" => Ok(Modality::Structure),
            "image" | "visual" | "i" => Ok(Modality::Image),
            "text" | "textual" | "t" => Ok(Modality::Text),
            "joint" | "j" => Ok(Modality::Joint),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

/// Parses a comma-separated modality list, keeping canonical order and dropping duplicates.
pub fn parse_modalities(list: &str) -> Result<Vec<Modality>, Error> {
    let mut out: Vec<Modality> = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Modality = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out.sort();
    Ok(out)
}
