use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The seven rhetorical roles a judgment sentence can carry.
///
/// Integer codes are stable: `FAC = 0` through `RPC = 6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RhetoricalRole {
    Fac,
    Rlc,
    Arg,
    Ratio,
    Sta,
    Pre,
    Rpc,
}

pub const NUM_ROLES: usize = 7;

impl RhetoricalRole {
    pub const ALL: [RhetoricalRole; NUM_ROLES] = [
        RhetoricalRole::Fac,
        RhetoricalRole::Rlc,
        RhetoricalRole::Arg,
        RhetoricalRole::Ratio,
        RhetoricalRole::Sta,
        RhetoricalRole::Pre,
        RhetoricalRole::Rpc,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            RhetoricalRole::Fac => "FAC",
            RhetoricalRole::Rlc => "RLC",
            RhetoricalRole::Arg => "ARG",
            RhetoricalRole::Ratio => "RATIO",
            RhetoricalRole::Sta => "STA",
            RhetoricalRole::Pre => "PRE",
            RhetoricalRole::Rpc => "RPC",
        }
    }

    /// Long name without the abbreviation, e.g. "Ruling by Lower Court".
    pub fn name(self) -> &'static str {
        match self {
            RhetoricalRole::Fac => "Facts",
            RhetoricalRole::Rlc => "Ruling by Lower Court",
            RhetoricalRole::Arg => "Argument",
            RhetoricalRole::Ratio => "Ratio of the decision",
            RhetoricalRole::Sta => "Statute",
            RhetoricalRole::Pre => "Precedent",
            RhetoricalRole::Rpc => "Ruling by the Present Court",
        }
    }

    /// "Facts (FAC)" style label used in prompts.
    pub fn display_name(self) -> String {
        format!("{} ({})", self.name(), self.abbrev())
    }

    pub fn description(self) -> &'static str {
        match self {
            RhetoricalRole::Fac => "This label refers to the facts pertinent to the case.",
            RhetoricalRole::Rlc => "This label refers to the verdicts of lower courts (Trial Courts, High Courts, and Tribunals) and the ratio behind these judgments.",
            RhetoricalRole::Arg => "This label refers to the arguments of the contending parties.",
            RhetoricalRole::Ratio => "This label refers to the application of the law along with the rationale on the points argued in the case.",
            RhetoricalRole::Sta => "Established laws the court refers to, usually coming from Acts, Articles, Rules, Orders, Quotations directly from the bare act, Notices, etc.",
            RhetoricalRole::Pre => "This label refers to the prior cases cited as a justification or analogy in the context of the current case.",
            RhetoricalRole::Rpc => "This label refers to the final judgment/ decision of the court for the case.",
        }
    }
}

impl fmt::Display for RhetoricalRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRoleError(pub String);

impl fmt::Display for ParseRoleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown rhetorical role {:?}", self.0)
    }
}

impl std::error::Error for ParseRoleError {}

impl FromStr for RhetoricalRole {
    type Err = ParseRoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.abbrev().eq_ignore_ascii_case(t))
            .ok_or_else(|| ParseRoleError(s.to_string()))
    }
}

impl Serialize for RhetoricalRole {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.abbrev())
    }
}

impl<'de> Deserialize<'de> for RhetoricalRole {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        for (i, r) in RhetoricalRole::ALL.iter().enumerate() {
            assert_eq!(r.code(), i);
            assert_eq!(RhetoricalRole::from_code(i), Some(*r));
        }
        assert_eq!(RhetoricalRole::Fac.code(), 0);
        assert_eq!(RhetoricalRole::Rpc.code(), 6);
        assert_eq!(RhetoricalRole::from_code(7), None);
    }

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("rpc".parse::<RhetoricalRole>().unwrap(), RhetoricalRole::Rpc);
        assert_eq!("Ratio".parse::<RhetoricalRole>().unwrap(), RhetoricalRole::Ratio);
        assert!("JUDGMENT".parse::<RhetoricalRole>().is_err());
        for r in RhetoricalRole::ALL {
            assert_eq!(r.abbrev().parse::<RhetoricalRole>().unwrap(), r);
            assert_eq!(r.abbrev().to_lowercase().parse::<RhetoricalRole>().unwrap(), r);
        }
    }
}
