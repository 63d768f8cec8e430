use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Cumulative ablation configurations.
///
/// | setting | perception tokens | multi-turn | three-role agents |
/// |---------|-------------------|------------|-------------------|
/// | a       |                   |            |                   |
/// | b       | yes               |            |                   |
/// | c       | yes               | yes        |                   |
/// | d       | yes               | yes        | yes               |
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationSetting {
    A,
    B,
    C,
    D,
}

impl AblationSetting {
    pub const ALL: [AblationSetting; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn opt_enabled(self) -> bool {
        !matches!(self, Self::A)
    }

    pub fn multi_turn(self) -> bool {
        matches!(self, Self::C | Self::D)
    }

    pub fn ira_enabled(self) -> bool {
        matches!(self, Self::D)
    }

    pub fn default_rounds(self) -> u32 {
        if self.multi_turn() {
            2
        } else {
            1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::B => "b",
            Self::C => "c",
            Self::D => "d",
        }
    }
}

impl fmt::Display for AblationSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown ablation setting {0:?}, expected one of a, b, c, d")]
pub struct UnknownSetting(pub alloc::string::String);

impl FromStr for AblationSetting {
    type Err = UnknownSetting;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "a" | "A" => Ok(Self::A),
            "b" | "B" => Ok(Self::B),
            "c" | "C" => Ok(Self::C),
            "d" | "D" => Ok(Self::D),
            other => Err(UnknownSetting(other.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_follow_ablation_rows() {
        let rows: [(AblationSetting, bool, bool, bool); 4] = [
            (AblationSetting::A, false, false, false),
            (AblationSetting::B, true, false, false),
            (AblationSetting::C, true, true, false),
            (AblationSetting::D, true, true, true),
        ];
        for (s, opt, multi, ira) in rows {
            assert_eq!((s.opt_enabled(), s.multi_turn(), s.ira_enabled()), (opt, multi, ira), "{s}");
        }
    }

    #[test]
    fn parse_round_trip() {
        for s in AblationSetting::ALL {
            assert_eq!(s.as_str().parse::<AblationSetting>().unwrap(), s);
        }
        assert!("e".parse::<AblationSetting>().is_err());
    }
}
