//! Gradient-based saliency detectors.
//!
//! Every detector consumes the activations and gradients captured by the
//! network engine and produces a [`SaliencyMap`] at input resolution.
//! Method identifiers are stable strings (`ixg`, `gbp`, `gradcam`,
//! `guided-gradcam`, `normgrad-<kind>-<single|combined>`) shared by the
//! command line, configuration files and reports.

mod compute;
mod export;
mod methods;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use compute::{compute_saliency, compute_suite, SaliencyOptions, SuiteOutput, Target};
pub use export::{map_to_pgm, read_raw_map, write_map_pgm, write_raw_map, RawMapSidecar};
pub use methods::{
    grad_cam, grad_cam_coarse, guided_backprop_map, guided_grad_cam, input_x_grad, normgrad_coarse,
    normgrad_combine, normgrad_oracle, normgrad_single,
};

/// The virtual identity layer whose parameter gradient defines a NormGrad map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VilKind {
    Bias,
    Scaling,
    /// `N×N` convolution with odd `N`.
    Conv(usize),
}

impl fmt::Display for VilKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VilKind::Bias => f.write_str("bias"),
            VilKind::Scaling => f.write_str("scaling"),
            VilKind::Conv(n) => write!(f, "conv{n}x{n}"),
        }
    }
}

impl FromStr for VilKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bias" => Ok(VilKind::Bias),
            "scaling" => Ok(VilKind::Scaling),
            "conv1x1" => Ok(VilKind::Conv(1)),
            "conv3x3" => Ok(VilKind::Conv(3)),
            _ => Err(Error::invalid(format!("unknown VIL kind `{s}`"))),
        }
    }
}

/// A saliency detector together with its configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    InputXGrad,
    GuidedBackprop,
    GradCam,
    GuidedGradCam,
    NormGrad { kind: VilKind, combined: bool },
}

impl Method {
    /// The methods evaluated by the experiment grid by default.
    ///
    /// NormGrad with a bias VIL is available but not part of the benchmark set.
    pub fn benchmark_set() -> Vec<Method> {
        let mut v = vec![
            Method::InputXGrad,
            Method::GuidedBackprop,
            Method::GradCam,
            Method::GuidedGradCam,
        ];
        for kind in [VilKind::Scaling, VilKind::Conv(1), VilKind::Conv(3)] {
            for combined in [false, true] {
                v.push(Method::NormGrad { kind, combined });
            }
        }
        v
    }

    pub fn vil_kind(&self) -> Option<VilKind> {
        match self {
            Method::NormGrad { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    pub fn is_combined(&self) -> bool {
        matches!(self, Method::NormGrad { combined: true, .. })
    }

    /// Whether the method needs a guided-mode backward pass.
    pub fn needs_guided(&self) -> bool {
        matches!(self, Method::GuidedBackprop | Method::GuidedGradCam)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::InputXGrad => f.write_str("ixg"),
            Method::GuidedBackprop => f.write_str("gbp"),
            Method::GradCam => f.write_str("gradcam"),
            Method::GuidedGradCam => f.write_str("guided-gradcam"),
            Method::NormGrad { kind, combined } => write!(
                f,
                "normgrad-{kind}-{}",
                if *combined { "combined" } else { "single" }
            ),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ixg" => return Ok(Method::InputXGrad),
            "gbp" => return Ok(Method::GuidedBackprop),
            "gradcam" => return Ok(Method::GradCam),
            "guided-gradcam" => return Ok(Method::GuidedGradCam),
            _ => {}
        }
        let unknown = || Error::invalid(format!("unknown saliency method `{s}`"));
        let rest = s.strip_prefix("normgrad-").ok_or_else(unknown)?;
        let (kind, mode) = rest.rsplit_once('-').ok_or_else(unknown)?;
        let combined = match mode {
            "single" => false,
            "combined" => true,
            _ => return Err(unknown()),
        };
        Ok(Method::NormGrad {
            kind: kind.parse().map_err(|_| unknown())?,
            combined,
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// A per-pixel relevance map at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `H×W` values.
    pub values: Tensor,
    pub method: Method,
    /// Layers whose hooks produced the map; empty for input-space methods.
    pub hook_layers: Vec<String>,
    pub smoothed: bool,
}

impl SaliencyMap {
    pub fn new(values: Tensor, method: Method, hook_layers: Vec<String>) -> Result<Self> {
        let (h, w) = values.hw()?;
        Ok(SaliencyMap {
            values: values.reshape(&[h, w])?,
            method,
            hook_layers,
            smoothed: false,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[0], s[1])
    }

    pub fn vil_kind(&self) -> Option<VilKind> {
        self.method.vil_kind()
    }

    pub fn combined(&self) -> bool {
        self.method.is_combined()
    }

    /// Row-major `(x, y)` of the first maximal pixel.
    pub fn argmax(&self) -> (usize, usize) {
        let (_, w) = self.size();
        let i = self.values.argmax();
        (i % w, i / w)
    }

    /// Gaussian-smoothed copy.
    pub fn smoothed(&self, sigma: f64) -> Result<SaliencyMap> {
        Ok(SaliencyMap {
            values: crate::kernels::gaussian_smooth(&self.values, sigma)?,
            smoothed: true,
            ..self.clone()
        })
    }
}
