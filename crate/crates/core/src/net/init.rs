//! Parameter randomization schemes used as sanity baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{he_normal, Layer, Model};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Every weight redrawn He-normal, biases zero, BatchNorm reset.
    #[serde(rename = "FR")]
    FullyRandom,
    /// Feature layers copied from a donor, final classifier redrawn He-normal.
    #[serde(rename = "SR")]
    SemiRandom,
    /// Parameters taken verbatim from a trained checkpoint.
    #[serde(rename = "trained")]
    TrainedLoad,
}

/// Returns a copy of `model` with parameters set according to `scheme`.
///
/// `donor` supplies pretrained parameters for [`Scheme::SemiRandom`] and
/// [`Scheme::TrainedLoad`]; it must share the model's topology.
pub fn randomize_model(
    model: &Model,
    scheme: Scheme,
    seed: u64,
    donor: Option<&Model>,
) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let need_donor = || {
        let d = donor.ok_or_else(|| {
            Error::MissingResource(format!("{scheme:?} randomization needs a donor checkpoint"))
        })?;
        if d.config.layers != model.config.layers
            || d.config.input_channels != model.config.input_channels
        {
            return Err(Error::invalid("donor topology differs from the model"));
        }
        Ok(d)
    };
    match scheme {
        Scheme::FullyRandom => {
            let mut out = model.clone();
            for layer in &mut out.layers {
                match layer {
                    Layer::Conv { weight, bias, .. } => {
                        let s = weight.shape().to_vec();
                        *weight = he_normal(&s, s[1] * s[2] * s[3], &mut rng);
                        bias.data_mut().fill(0.0);
                    }
                    Layer::Fc { weight, bias } => {
                        let s = weight.shape().to_vec();
                        *weight = he_normal(&s, s[1], &mut rng);
                        bias.data_mut().fill(0.0);
                    }
                    Layer::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => {
                        gamma.data_mut().fill(1.0);
                        beta.data_mut().fill(0.0);
                        running_mean.data_mut().fill(0.0);
                        running_var.data_mut().fill(1.0);
                    }
                    _ => {}
                }
            }
            out.meta = Default::default();
            out.meta.seed = seed;
            Ok(out)
        }
        Scheme::SemiRandom => {
            let d = need_donor()?;
            let mut out = model.clone();
            out.layers = d.layers.clone();
            let fc = out
                .last_fc()
                .ok_or_else(|| Error::invalid("model has no fully connected layer"))?;
            if let Layer::Fc { weight, bias } = &mut out.layers[fc] {
                let s = weight.shape().to_vec();
                *weight = he_normal(&s, s[1], &mut rng);
                bias.data_mut().fill(0.0);
            }
            out.meta = Default::default();
            out.meta.seed = seed;
            Ok(out)
        }
        Scheme::TrainedLoad => {
            let d = need_donor()?;
            let mut out = model.clone();
            out.layers = d.layers.clone();
            out.meta = d.meta.clone();
            Ok(out)
        }
    }
}
