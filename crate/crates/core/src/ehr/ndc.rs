use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use super::vocab::is_atc3;
use crate::error::{Error, Result};

/// NDC product code → ATC level-3 class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NdcAtcMap {
    rows: BTreeMap<String, String>,
}

/// First four characters when they form an ATC3 code (`N02BE01` → `N02B`).
fn atc_prefix(code: &str) -> Option<&str> {
    code.get(..4).filter(|p| is_atc3(p))
}

impl NdcAtcMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row. Longer ATC codes are truncated to level 3; an NDC may
    /// map to only one class.
    pub fn insert(&mut self, ndc: &str, atc: &str) -> Result<()> {
        let atc3 = atc_prefix(atc)
            .ok_or_else(|| Error::InvalidRecord(format!("{atc:?} is not an ATC code")))?;
        match self.rows.get(ndc) {
            Some(prev) if prev != atc3 => Err(Error::InvalidRecord(format!(
                "NDC {ndc} maps to both {prev} and {atc3}"
            ))),
            _ => {
                self.rows.insert(ndc.to_string(), atc3.to_string());
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rows.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Maps an NDC through the table; a code that is already ATC (any
    /// level ≥ 3) is truncated to its level-3 prefix.
    pub fn ndc_to_atc3(&self, code: &str) -> Result<String> {
        if let Some(atc3) = self.rows.get(code) {
            return Ok(atc3.clone());
        }
        atc_prefix(code).map(ToString::to_string).ok_or_else(|| Error::UnmappedNdc(code.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> NdcAtcMap {
        let mut m = NdcAtcMap::new();
        m.insert("00045-0110", "N02B").unwrap();
        m.insert("00093-0058", "C09AA05").unwrap();
        m
    }

    #[test]
    fn table_lookup() {
        assert_eq!(fixture().ndc_to_atc3("00045-0110").unwrap(), "N02B");
        assert_eq!(fixture().ndc_to_atc3("00093-0058").unwrap(), "C09A");
    }

    #[test]
    fn atc5_truncates() {
        assert_eq!(fixture().ndc_to_atc3("N02BE01").unwrap(), "N02B");
    }

    #[test]
    fn unmapped() {
        assert_eq!(fixture().ndc_to_atc3("99999-9999"), Err(Error::UnmappedNdc("99999-9999".into())));
    }

    #[test]
    fn conflicting_rows() {
        let mut m = fixture();
        assert!(m.insert("00045-0110", "A01A").is_err());
        assert!(m.insert("00045-0110", "N02BE01").is_ok());
        assert!(m.insert("1", "xyz").is_err());
    }
}
