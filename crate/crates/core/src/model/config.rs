use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conversation::StructureVariant;
use crate::encoder::MAX_TOKENS;
use crate::error::{Error, Result};

/// How the claim enters post-level attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PostAttention {
    /// Gated claim-aware representation joined with the original one.
    #[default]
    On,
    /// Plain node features only.
    Off,
    /// Raw claim features joined with each node's features, no gate.
    SimpleConcat,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Gnn {
    #[default]
    Gat,
    /// Fixed symmetric-normalized weights instead of learned attention.
    Gcn,
}

macro_rules! string_enum {
    ($ty:ty, $kind:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Unknown { kind: $kind, name: s.to_string() }),
                }
            }
        }

        impl TryFrom<String> for $ty {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }

        impl From<$ty> for String {
            fn from(v: $ty) -> String {
                v.to_string()
            }
        }
    };
}

string_enum!(PostAttention, "post-attention mode",
    PostAttention::On => "on",
    PostAttention::Off => "off",
    PostAttention::SimpleConcat => "simple-concat",
);

string_enum!(Gnn, "graph network", Gnn::Gat => "gat", Gnn::Gcn => "gcn");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Node width of every graph layer output.
    pub hidden: usize,
    /// Per-direction LSTM width; the encoder emits twice this.
    pub lstm_hidden: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub classes: usize,
    pub post_attention: PostAttention,
    pub event_attention: bool,
    pub gnn: Gnn,
    pub structure: StructureVariant,
    pub fine_tune_embeddings: bool,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            hidden: 128,
            lstm_hidden: 64,
            leaky_slope: 0.2,
            dropout: 0.2,
            classes: 4,
            post_attention: PostAttention::On,
            event_attention: true,
            gnn: Gnn::Gat,
            structure: StructureVariant::UndirectedFull,
            fine_tune_embeddings: false,
            max_tokens: MAX_TOKENS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.lstm_hidden == 0 {
            return fail("layers, heads, hidden and lstm_hidden must be positive".into());
        }
        if self.layers > 1 && !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return fail(format!("leaky slope {} must be non-negative", self.leaky_slope));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Whether the claim gate takes part in the forward pass.
    pub fn uses_gate(&self) -> bool {
        self.gnn == Gnn::Gat && self.post_attention == PostAttention::On
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.lstm_hidden
        } else {
            self.hidden
        }
    }

    /// Width fed to each head's transform: doubled when claim features are
    /// joined on.
    pub fn refined_input(&self, layer: usize) -> usize {
        let d = self.layer_input(layer);
        match (self.gnn, self.post_attention) {
            (Gnn::Gat, PostAttention::On | PostAttention::SimpleConcat) => 2 * d,
            _ => d,
        }
    }

    pub fn is_final(&self, layer: usize) -> bool {
        layer + 1 == self.layers
    }

    pub fn head_width(&self, layer: usize) -> usize {
        if self.is_final(layer) {
            self.hidden
        } else {
            self.hidden / self.heads
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layer_input(0), 128);
        assert_eq!(c.refined_input(0), 256);
        assert_eq!(c.head_width(0), 32);
        assert_eq!(c.head_width(1), 128);
        let gcn = ModelConfig { gnn: Gnn::Gcn, ..c.clone() };
        assert_eq!(gcn.refined_input(1), 128);
        assert!(!gcn.uses_gate());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            ModelConfig { layers: 0, ..Default::default() },
            ModelConfig { heads: 3, ..Default::default() },
            ModelConfig { dropout: 1.0, ..Default::default() },
            ModelConfig { classes: 1, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        let single = ModelConfig { layers: 1, heads: 3, ..Default::default() };
        single.validate().unwrap();
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [PostAttention::On, PostAttention::Off, PostAttention::SimpleConcat] {
            assert_eq!(m.to_string().parse::<PostAttention>().unwrap(), m);
        }
        assert_eq!("gcn".parse::<Gnn>().unwrap(), Gnn::Gcn);
        assert!("mlp".parse::<Gnn>().is_err());
    }
}
