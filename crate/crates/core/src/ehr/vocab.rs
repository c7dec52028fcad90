use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
    Medication,
}

impl CodeKind {
    pub fn name(self) -> &'static str {
        match self {
            CodeKind::Diagnosis => "diagnosis",
            CodeKind::Procedure => "procedure",
            CodeKind::Medication => "medication",
        }
    }
}

/// `letter, digit, digit, letter`, e.g. `N02B`.
pub fn is_atc3(code: &str) -> bool {
    let b = code.as_bytes();
    b.len() == 4
        && b[0].is_ascii_uppercase()
        && b[1].is_ascii_digit()
        && b[2].is_ascii_digit()
        && b[3].is_ascii_uppercase()
}

/// Ordered set of codes; position in `codes` is the model index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeVocab {
    kind: CodeKind,
    codes: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl CodeVocab {
    pub fn new(kind: CodeKind, codes: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidRecord(format!("empty {} code", kind.name())));
            }
            if kind == CodeKind::Medication && !is_atc3(c) {
                return Err(Error::InvalidRecord(format!("medication code {c:?} is not ATC level 3")));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidRecord(format!("duplicate {} code {c:?}", kind.name())));
            }
        }
        Ok(CodeVocab { kind, codes, index })
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    /// Index of `code`, or an unknown-code error.
    pub fn lookup(&self, code: &str) -> Result<usize> {
        self.get(code).ok_or_else(|| Error::UnknownCode { kind: self.kind.name(), code: code.into() })
    }

    pub fn code(&self, i: usize) -> Option<&str> {
        self.codes.get(i).map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabs {
    pub diagnoses: CodeVocab,
    pub procedures: CodeVocab,
    pub medications: CodeVocab,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn bijection() {
        let v = CodeVocab::new(CodeKind::Diagnosis, vec!["4019".into(), "25000".into()]).unwrap();
        assert_eq!(v.get("25000"), Some(1));
        assert_eq!(v.code(0), Some("4019"));
        assert!(v.lookup("x").is_err());
    }

    #[test]
    fn rejects_duplicates_and_bad_atc() {
        assert!(CodeVocab::new(CodeKind::Procedure, vec!["a".into(), "a".into()]).is_err());
        assert!(CodeVocab::new(CodeKind::Medication, vec!["N02BE01".into()]).is_err());
        assert!(is_atc3("N02B"));
        assert!(!is_atc3("n02b"));
    }
}
