use crate::error::{Error, Result};
use crate::routing::{em_route, rba_route, sda_route, Capsules, EmParams, RoutingKind};
use crate::tensor::{Graph, Real, Tensor, TensorError, Var};

use super::{BoundParams, LayerKind, LayerSpec, ModelConfig};

/// Parameters of one routed capsule layer.
#[derive(Debug, Clone, Copy)]
pub struct CapsuleLayerParams {
    /// `N_in x N_out x d_out x d_in` transformation matrices.
    pub weights: Var,
    /// `N_out x d_out` parent bias.
    pub bias: Var,
    /// EM betas; required for EM routing.
    pub em: Option<EmParams>,
}

/// Fully connected capsule layer: votes `W_ij u_i` for every pair,
/// followed by the requested router.
pub fn fc_capsule_layer<T: Real>(
    g: &mut Graph<T>,
    input: Capsules,
    params: &CapsuleLayerParams,
    routing: RoutingKind,
    iterations: usize,
) -> Result<Capsules> {
    let votes = g.capsule_votes(input.poses, params.weights)?;
    let out = match routing {
        RoutingKind::Rba => rba_route(g, votes, params.bias, iterations, None)?,
        RoutingKind::Sda => sda_route(g, input.activations, votes, params.bias, iterations, None)?,
        RoutingKind::Em => {
            let em = params
                .em
                .as_ref()
                .ok_or_else(|| Error::Config("EM routing needs beta parameters".into()))?;
            em_route(g, input.activations, votes, params.bias, em, iterations, None)?
        }
    };
    Ok(out)
}

/// Shortcut around a two-layer block: poses `inner + x`, added after
/// routing and not re-squashed. Length-activation routers recompute
/// activations from the summed poses; EM keeps the inner activations.
pub fn residual_block<T: Real>(g: &mut Graph<T>, x: Capsules, inner: Capsules, routing: RoutingKind) -> Result<Capsules> {
    if g.dims(x.poses) != g.dims(inner.poses) {
        return Err(TensorError::ShapeMismatch {
            op: "residual block",
            lhs: g.dims(inner.poses).to_vec(),
            rhs: g.dims(x.poses).to_vec(),
        }
        .into());
    }
    let poses = g.add(inner.poses, x.poses)?;
    if routing.length_activations() {
        Ok(Capsules::from_poses(g, poses)?)
    } else {
        Ok(Capsules {
            poses,
            activations: inner.activations,
        })
    }
}

/// Class capsules and the predicted class (argmax of activations) per sample.
pub fn class_capsules<T: Real>(
    g: &mut Graph<T>,
    input: Capsules,
    params: &CapsuleLayerParams,
    routing: RoutingKind,
    iterations: usize,
) -> Result<(Capsules, Vec<usize>)> {
    let caps = fc_capsule_layer(g, input, params, routing, iterations)?;
    let predictions = argmax_rows(g.value(caps.activations));
    Ok((caps, predictions))
}

fn argmax_rows<T: Real>(activations: &Tensor<T>) -> Vec<usize> {
    let k = activations.dims()[1];
    activations
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Which class capsule feeds the reconstruction decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mask {
    /// No reconstruction.
    None,
    /// The given label per sample (training).
    Labels(Vec<usize>),
    /// The predicted class per sample (evaluation).
    Predicted,
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub class_caps: Capsules,
    /// Class activations `B x K x 1`.
    pub activations: Var,
    pub predictions: Vec<usize>,
    /// Decoder output `B x (H W C)` in `(0, 1)`, when a mask was requested.
    pub reconstruction: Option<Var>,
}

/// The depth-parameterized capsule network.
#[derive(Debug, Clone)]
pub struct CapsNet {
    config: ModelConfig,
    plan: Vec<LayerSpec>,
}

impl CapsNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let plan = config.plan()?;
        Ok(Self { config, plan })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &[LayerSpec] {
        &self.plan
    }

    fn layer_params(&self, params: &BoundParams, name: &str) -> Result<CapsuleLayerParams> {
        let em = match self.config.routing {
            RoutingKind::Em => Some(EmParams {
                beta_a: params.get(&format!("{name}.beta_a"))?,
                beta_u: params.get(&format!("{name}.beta_u"))?,
                lambda: self.config.lambda,
            }),
            _ => None,
        };
        Ok(CapsuleLayerParams {
            weights: params.get(&format!("{name}.w"))?,
            bias: params.get(&format!("{name}.bias"))?,
            em,
        })
    }

    /// Runs the network on standardized `B x H x W x C` input.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &BoundParams, input: Var, mask: &Mask) -> Result<Forward> {
        let a = &self.config.architecture;
        let dims = g.dims(input).to_vec();
        if dims.len() != 4 || dims[1..] != a.input {
            return Err(TensorError::ShapeMismatch {
                op: "model input",
                lhs: dims,
                rhs: vec![0, a.input[0], a.input[1], a.input[2]],
            }
            .into());
        }
        let batch = dims[0];
        let routing = self.config.routing;

        let mut features = None;
        let mut caps: Option<Capsules> = None;
        // Block input and the name of the block's second layer.
        let mut open_block: Option<(Capsules, String)> = None;
        let mut out = None;
        for spec in &self.plan {
            match spec.kind {
                LayerKind::ConvStem => {
                    let y = g.conv2d(input, params.get("stem.w")?, params.get("stem.b")?, 1)?;
                    features = Some(g.relu(y)?);
                }
                LayerKind::Primary => {
                    let f = features.expect("stem precedes primary");
                    let y = g.conv2d(f, params.get("primary.w")?, params.get("primary.b")?, a.primary_stride)?;
                    let y = g.relu(y)?;
                    let y = g.reshape(y, vec![batch, a.primary_caps(), a.primary_dim])?;
                    let poses = g.squash(y, 2)?;
                    caps = Some(Capsules::from_poses(g, poses)?);
                }
                LayerKind::ResidualBlock => {
                    let x = caps.expect("block follows capsules");
                    open_block = Some((x, spec.inner[1].clone()));
                }
                LayerKind::FcCapsule => {
                    let p = self.layer_params(params, &spec.name)?;
                    let x = caps.expect("capsule layer follows capsules");
                    let mut y = fc_capsule_layer(g, x, &p, routing, spec.iterations)?;
                    if let Some((block_in, last)) = open_block.take() {
                        if last == spec.name {
                            y = residual_block(g, block_in, y, routing)?;
                        } else {
                            open_block = Some((block_in, last));
                        }
                    }
                    caps = Some(y);
                }
                LayerKind::ClassCapsule => {
                    let p = self.layer_params(params, &spec.name)?;
                    let x = caps.expect("class layer follows capsules");
                    out = Some(class_capsules(g, x, &p, routing, spec.iterations)?);
                }
                LayerKind::Decoder => {}
            }
        }
        let (class_caps, predictions) = out.expect("plan ends with class capsules");
        let labels = match mask {
            Mask::None => None,
            Mask::Labels(l) => Some(l.clone()),
            Mask::Predicted => Some(predictions.clone()),
        };
        let reconstruction = match labels {
            Some(labels) => Some(self.decode(g, params, class_caps, &labels)?),
            None => None,
        };
        Ok(Forward {
            class_caps,
            activations: class_caps.activations,
            predictions,
            reconstruction,
        })
    }

    /// Reconstruction decoder on class poses with all but the `labels`
    /// capsule zeroed.
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, params: &BoundParams, class_caps: Capsules, labels: &[usize]) -> Result<Var> {
        let a = &self.config.architecture;
        let batch = g.dims(class_caps.poses)[0];
        if labels.len() != batch {
            return Err(Error::Config(format!("{} mask labels for a batch of {batch}", labels.len())));
        }
        let mut mask = Tensor::zeros(vec![batch, a.classes, 1]);
        for (b, &label) in labels.iter().enumerate() {
            if label >= a.classes {
                return Err(Error::Config(format!("mask label {label} out of range for {} classes", a.classes)));
            }
            mask.set(&[b, label, 0], T::one());
        }
        let mask = g.constant(mask)?;
        let masked = g.mul(class_caps.poses, mask)?;
        let mut h = g.reshape(masked, vec![batch, a.classes * a.class_dim])?;
        for k in 1..=3 {
            let w = params.get(&format!("decoder.fc{k}.w"))?;
            let b = params.get(&format!("decoder.fc{k}.b"))?;
            let z = g.matmul(h, w)?;
            let z = g.add(z, b)?;
            h = if k < 3 { g.relu(z)? } else { g.sigmoid(z)? };
        }
        Ok(h)
    }
}
