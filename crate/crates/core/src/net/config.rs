//! Layer graph descriptions and the two stock variants.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFamily {
    Relu,
    Silu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        pad: usize,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm {
        channels: usize,
    },
    Activation,
    #[serde(rename = "maxpool")]
    MaxPool {
        size: usize,
    },
    Gap,
    Fc {
        in_features: usize,
        out_features: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub hookable: bool,
}

impl LayerSpec {
    fn new(name: &str, kind: LayerKind, hookable: bool) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            hookable,
        }
    }
}

/// Full description of a network: topology, activation family and input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub activation: ActivationFamily,
    pub input_channels: usize,
    /// `(height, width)` of accepted inputs.
    pub input_size: (usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// Names of the post-activation block outputs, in network order.
pub const BLOCK_OUTPUTS: [&str; 4] = ["block1.act", "block2.act", "block3.act", "block4.act"];

/// The layer Grad-CAM and single-layer NormGrad hook by default.
pub const LAST_CONV_BLOCK: &str = "block4.act";

impl ModelConfig {
    /// Stock variants: `micro-res` (ReLU) and `micro-eff` (SiLU), identical topology.
    pub fn stock(variant: &str, input_size: (usize, usize)) -> Result<Self> {
        let activation = match variant {
            "micro-res" => ActivationFamily::Relu,
            "micro-eff" => ActivationFamily::Silu,
            other => return Err(Error::Config(format!("unknown model variant `{other}`"))),
        };
        let mut layers = Vec::new();
        let blocks = [
            (1, 8, true),
            (8, 16, true),
            (16, 32, false),
            (32, 32, false),
        ];
        for (i, &(cin, cout, pool)) in blocks.iter().enumerate() {
            let b = i + 1;
            layers.push(LayerSpec::new(
                &format!("block{b}.conv"),
                LayerKind::Conv {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                false,
            ));
            layers.push(LayerSpec::new(
                &format!("block{b}.bn"),
                LayerKind::BatchNorm { channels: cout },
                false,
            ));
            layers.push(LayerSpec::new(
                &format!("block{b}.act"),
                LayerKind::Activation,
                true,
            ));
            if pool {
                layers.push(LayerSpec::new(
                    &format!("pool{b}"),
                    LayerKind::MaxPool { size: 2 },
                    true,
                ));
            }
        }
        layers.push(LayerSpec::new("gap", LayerKind::Gap, false));
        layers.push(LayerSpec::new(
            "fc",
            LayerKind::Fc {
                in_features: 32,
                out_features: 2,
            },
            false,
        ));
        Ok(ModelConfig {
            name: variant.to_string(),
            activation,
            input_channels: 1,
            input_size,
            layers,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn hookable_layers(&self) -> impl Iterator<Item = &str> {
        self.layers
            .iter()
            .filter(|l| l.hookable)
            .map(|l| l.name.as_str())
    }

    /// Checks name uniqueness and that shapes flow through the layer list.
    /// Returns the per-layer output shapes.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::Config(format!("duplicate layer name `{}`", l.name)));
            }
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || self.input_channels == 0 {
            return Err(Error::Config(
                "input size and channels must be positive".into(),
            ));
        }
        let mut shape = vec![self.input_channels, h, w];
        let mut shapes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let bad = |msg: String| Error::Config(format!("layer `{}`: {msg}", l.name));
            shape = match (&l.kind, shape.as_slice()) {
                (
                    LayerKind::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        pad,
                    },
                    &[c, h, w],
                ) => {
                    if *in_channels != c {
                        return Err(bad(format!("expects {in_channels} channels, receives {c}")));
                    }
                    if *kernel == 0
                        || *stride == 0
                        || h + 2 * pad < *kernel
                        || w + 2 * pad < *kernel
                    {
                        return Err(bad("kernel does not fit its input".into()));
                    }
                    vec![
                        *out_channels,
                        (h + 2 * pad - kernel) / stride + 1,
                        (w + 2 * pad - kernel) / stride + 1,
                    ]
                }
                (LayerKind::BatchNorm { channels }, &[c, _, _]) => {
                    if *channels != c {
                        return Err(bad(format!("expects {channels} channels, receives {c}")));
                    }
                    shape
                }
                (LayerKind::Activation, _) => shape,
                (LayerKind::MaxPool { size }, &[c, h, w]) => {
                    if *size == 0 || h < *size || w < *size {
                        return Err(bad("pool window larger than input".into()));
                    }
                    vec![c, h / size, w / size]
                }
                (LayerKind::Gap, &[c, _, _]) => vec![c],
                (
                    LayerKind::Fc {
                        in_features,
                        out_features,
                    },
                    &[f],
                ) => {
                    if *in_features != f {
                        return Err(bad(format!("expects {in_features} features, receives {f}")));
                    }
                    vec![*out_features]
                }
                (_, s) => return Err(bad(format!("cannot accept input of shape {s:?}"))),
            };
            if l.hookable && shape.len() != 3 {
                return Err(bad("only spatial layers can be hookable".into()));
            }
            shapes.push(shape.clone());
        }
        if shape.len() != 1 {
            return Err(Error::Config(
                "network must end in a vector of logits".into(),
            ));
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Fc { out_features, .. }) => *out_features,
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_variants() {
        let res = ModelConfig::stock("micro-res", (64, 64)).unwrap();
        assert_eq!(res.hookable_layers().count(), 6);
        assert_eq!(res.activation, ActivationFamily::Relu);
        assert_eq!(
            res.layers.last().unwrap().kind,
            LayerKind::Fc {
                in_features: 32,
                out_features: 2
            }
        );
        let shapes = res.validate().unwrap();
        assert_eq!(
            shapes[res.layer_index("block4.act").unwrap()],
            vec![32, 16, 16]
        );

        let eff = ModelConfig::stock("micro-eff", (64, 64)).unwrap();
        assert_eq!(eff.activation, ActivationFamily::Silu);
        assert_eq!(eff.layers, res.layers);
        assert!(ModelConfig::stock("resnet", (64, 64)).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut cfg = ModelConfig::stock("micro-res", (16, 16)).unwrap();
        cfg.layers[1].name = cfg.layers[0].name.clone();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_kind_is_config_error() {
        let json = r#"{"name":"x","activation":"relu","input_channels":1,"input_size":[8,8],
            "layers":[{"name":"a","kind":"dropout"}]}"#;
        assert!(matches!(
            ModelConfig::from_json(json),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let cfg = ModelConfig::stock("micro-eff", (16, 16)).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ModelConfig::from_json(&text).unwrap(), cfg);
    }
}
