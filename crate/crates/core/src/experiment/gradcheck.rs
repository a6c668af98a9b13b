//! Finite-difference gradient check of the full network (loss included) in
//! 64-bit arithmetic, one parameter element at a time.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{epoch_rng, DatasetId};
use crate::error::{Error, Result};
use crate::layers::{Architecture, CapsNet, Mask, ModelConfig, ParamStore};
use crate::loss::{margin_loss, reconstruction_loss, total_loss, LossConfig};
use crate::routing::RoutingKind;
use crate::tensor::{Graph, Tensor};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;
const BATCH: usize = 2;

/// A deliberate corruption of the analytic gradient, used to show that the
/// check detects errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GradFault {
    /// Negate the gradient of the named parameter.
    FlipSign(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    /// Parameter name.
    pub name: String,
    pub elements: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub routing: RoutingKind,
    pub depth: usize,
    pub use_skip: bool,
    pub groups: Vec<GroupError>,
    pub max_rel: f64,
    pub passed: bool,
    pub elapsed: Duration,
}

/// The tiny network checked for `routing`. The reconstruction term is
/// weighted 1 so the decoder gradients are not swamped by the margin term.
pub fn gradcheck_config(routing: RoutingKind, depth: usize, use_skip: bool) -> ModelConfig {
    let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, depth, use_skip);
    cfg.architecture = Architecture::tiny(10, 1);
    cfg.recon_weight = 1.0;
    cfg
}

struct Problem {
    net: CapsNet,
    input: Tensor<f64>,
    target: Tensor<f64>,
    labels: Vec<usize>,
    loss: LossConfig,
}

impl Problem {
    fn new(config: &ModelConfig) -> Result<Self> {
        let net = CapsNet::new(config.clone())?;
        let arch = &config.architecture;
        let mut rng = epoch_rng(config.seed, 0, 7);
        let n = BATCH * arch.pixels();
        let input: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels = (0..BATCH).map(|_| rng.gen_range(0..arch.classes)).collect();
        let [h, w, c] = arch.input;
        Ok(Self {
            net,
            input: Tensor::new(vec![BATCH, h, w, c], input)?,
            target: Tensor::new(vec![BATCH, n / BATCH], target)?,
            labels,
            loss: LossConfig {
                recon_weight: config.recon_weight,
                ..LossConfig::default()
            },
        })
    }

    /// Loss and, when requested, the analytic gradient of every parameter.
    fn evaluate(&self, params: &ParamStore<f64>, with_grad: bool) -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, with_grad)?;
        let x = g.constant(self.input.clone())?;
        let t = g.constant(self.target.clone())?;
        let out = self.net.forward(&mut g, &p, x, &Mask::Labels(self.labels.clone()))?;
        let margin = margin_loss(&mut g, out.activations, &self.labels, &self.loss)?;
        let recon = match out.reconstruction {
            Some(r) => Some(reconstruction_loss(&mut g, r, t)?),
            None => None,
        };
        let loss = total_loss(&mut g, margin, recon, &self.loss)?;
        let value = g.value(loss).item();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let mut grads = g.backward(loss)?;
        let grads = p
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.dims().to_vec())))
            .collect();
        Ok((value, grads))
    }
}

/// Compares analytic and central-difference gradients for every parameter
/// element of `config`'s network on a fixed batch of two random inputs.
pub fn gradcheck(config: &ModelConfig, fault: Option<&GradFault>) -> Result<GradcheckReport> {
    let started = Instant::now();
    let problem = Problem::new(config)?;
    let mut params = ParamStore::<f32>::init(config)?.cast::<f64>();
    let (_, mut analytic) = problem.evaluate(&params, true)?;
    if let Some(GradFault::FlipSign(name)) = fault {
        let i = params
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))?;
        analytic[i] = analytic[i].map(|v| -v);
    }
    let mut groups = Vec::with_capacity(params.len());
    for (i, name) in params.names().to_vec().into_iter().enumerate() {
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        let elements = analytic[i].len();
        for k in 0..elements {
            let original = params.tensors()[i].data()[k];
            params.tensors_mut()[i].data_mut()[k] = original + GRADCHECK_STEP;
            let (up, _) = problem.evaluate(&params, false)?;
            params.tensors_mut()[i].data_mut()[k] = original - GRADCHECK_STEP;
            let (down, _) = problem.evaluate(&params, false)?;
            params.tensors_mut()[i].data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let a = analytic[i].data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            // NaN compares false; record it explicitly
            if !rel.is_finite() {
                max_rel = f64::INFINITY;
            }
            max_rel = max_rel.max(rel);
            max_abs = max_abs.max(abs);
        }
        groups.push(GroupError {
            name,
            elements,
            max_rel,
            max_abs,
        });
    }
    let max_rel = groups.iter().map(|g| g.max_rel).fold(0.0, f64::max);
    Ok(GradcheckReport {
        routing: config.routing,
        depth: config.depth,
        use_skip: config.use_skip,
        passed: max_rel <= GRADCHECK_TOLERANCE,
        groups,
        max_rel,
        elapsed: started.elapsed(),
    })
}
