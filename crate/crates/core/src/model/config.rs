use alloc::format;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture toggles for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// GCN on both graphs, plain concatenation (the original GAMENet wiring).
    GcnBaseline,
    /// GAT on the DDI graph, plain concatenation.
    GatOnly,
    /// GAT on the DDI graph and multi-head attention over (query, fact1, fact2).
    GatMhca,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::GcnBaseline, Variant::GatOnly, Variant::GatMhca];

    pub fn uses_gat(self) -> bool {
        !matches!(self, Variant::GcnBaseline)
    }

    pub fn uses_mhca(self) -> bool {
        matches!(self, Variant::GatMhca)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::GcnBaseline => "gcn_baseline",
            Variant::GatOnly => "gat_only",
            Variant::GatMhca => "gat_mhca",
        }
    }

    /// Row label in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::GcnBaseline => "GAMENet",
            Variant::GatOnly => "GAMENet+GAT",
            Variant::GatMhca => "HERMES Kiosk",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?} (gcn_baseline, gat_only, gat_mhca)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub gru_hidden: usize,
    pub gat_heads: usize,
    pub mhca_heads: usize,
    pub dropout: f64,
    pub leaky_relu_slope: f64,
    pub ddi_loss_weight: f64,
    pub decision_threshold: f64,
    /// Feed procedure codes through their own GRU.
    pub use_procedures: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 64,
            gru_hidden: 64,
            gat_heads: 2,
            mhca_heads: 2,
            dropout: 0.5,
            leaky_relu_slope: 0.2,
            ddi_loss_weight: 0.05,
            decision_threshold: 0.5,
            use_procedures: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m| Err(Error::InvalidConfig(m));
        if self.emb_dim == 0 || self.gru_hidden == 0 {
            return bad("emb_dim and gru_hidden must be positive".into());
        }
        for (name, h) in [("gat_heads", self.gat_heads), ("mhca_heads", self.mhca_heads)] {
            if h == 0 || !self.emb_dim.is_multiple_of(h) {
                return bad(format!("emb_dim {} not divisible by {name} {h}", self.emb_dim));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.ddi_loss_weight >= 0.0 && self.ddi_loss_weight.is_finite()) {
            return bad("ddi_loss_weight must be ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return bad("decision_threshold must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Width of the patient query `concat(h_dx, h_px)`.
    pub fn query_dim(&self) -> usize {
        if self.use_procedures {
            2 * self.gru_hidden
        } else {
            self.gru_hidden
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().query_dim(), 128);
    }

    #[test]
    fn rejects_bad_heads_and_dropout() {
        let c = ModelConfig { gat_heads: 3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { dropout: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { ddi_loss_weight: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("gamenet".parse::<Variant>().is_err());
    }
}
