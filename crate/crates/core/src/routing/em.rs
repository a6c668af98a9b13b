use std::f64::consts::PI;

use super::{parent_bias, record, vote_shape, Capsules, RoutingTrace};
use crate::tensor::{Graph, Real, Result, Tensor, TensorError, Var};

/// Floor added to every per-dimension variance.
pub const EM_VARIANCE_FLOOR: f64 = 1e-6;

/// Inverse temperature per iteration: `base + step * t` for 0-based `t`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LambdaSchedule {
    pub base: f64,
    pub step: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self { base: 1.0, step: 1.0 }
    }
}

impl LambdaSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        self.base + self.step * iteration as f64
    }
}

/// Learned per-parent EM quantities, as graph variables of shape `M`.
#[derive(Debug, Clone, Copy)]
pub struct EmParams {
    pub beta_a: Var,
    pub beta_u: Var,
    pub lambda: LambdaSchedule,
}

/// Expectation-maximization routing over pose vectors.
///
/// Each parent is a diagonal Gaussian over its incoming votes. The M-step
/// weighs responsibilities by child activation, fits mean and variance,
/// and derives the parent activation from the description cost
/// `sum_h (beta_u + ln(sigma_h)) * m_j` through a tempered sigmoid. The
/// E-step reassigns responsibilities from the activation-weighted Gaussian
/// likelihoods; it is skipped after the final M-step.
///
/// `child_activations` is `B x N x 1`. Returns `mu_j + bias` as poses and
/// the sigmoid activations.
pub fn em_route<T: Real>(
    g: &mut Graph<T>,
    child_activations: Var,
    votes: Var,
    bias: Var,
    params: &EmParams,
    iterations: usize,
    mut trace: Option<&mut RoutingTrace<T>>,
) -> Result<Capsules> {
    let shape = vote_shape(g, votes, iterations)?;
    if g.dims(child_activations) != [shape.batch, shape.children, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "em child activations",
            lhs: g.dims(child_activations).to_vec(),
            rhs: vec![shape.batch, shape.children, 1],
        });
    }
    for beta in [params.beta_a, params.beta_u] {
        if g.dims(beta) != [shape.parents] {
            return Err(TensorError::ShapeMismatch {
                op: "em beta",
                lhs: g.dims(beta).to_vec(),
                rhs: vec![shape.parents],
            });
        }
    }
    let bias = parent_bias(g, bias, &shape)?;
    let per_parent = vec![1, 1, shape.parents, 1];
    let beta_a = g.reshape(params.beta_a, per_parent.clone())?;
    let beta_u = g.reshape(params.beta_u, per_parent)?;
    let act = g.reshape(child_activations, vec![shape.batch, shape.children, 1, 1])?;

    let uniform = T::of(1.0 / shape.parents as f64);
    let mut resp = g.constant(Tensor::full(
        vec![shape.batch, shape.children, shape.parents, 1],
        uniform,
    ))?;
    let mut out = None;
    for it in 0..iterations {
        record(&mut trace, g, resp, |t| &mut t.couplings);

        // M-step
        let weights = g.mul(resp, act)?;
        let mass = g.sum_axis(weights, 1)?;
        let wv_sum = g.weighted_sum(weights, votes)?;
        let mean = g.div(wv_sum, mass)?;
        let diff = g.sub(votes, mean)?;
        let diff2 = g.square(diff)?;
        let wd_sum = g.weighted_sum(weights, diff2)?;
        let var = g.div(wd_sum, mass)?;
        let var = g.offset(var, EM_VARIANCE_FLOOR)?;
        record(&mut trace, g, var, |t| &mut t.variances);

        let log_var = g.log(var)?;
        let half_log_var = g.scale(log_var, 0.5)?;
        let per_dim = g.add(half_log_var, beta_u)?;
        let cost = g.sum_axis(per_dim, 3)?;
        let cost = g.mul(cost, mass)?;
        let margin = g.sub(beta_a, cost)?;
        let tempered = g.scale(margin, params.lambda.at(it))?;
        let activation = g.sigmoid(tempered)?;
        record(&mut trace, g, activation, |t| &mut t.parent_activations);
        out = Some((mean, activation));

        if it + 1 < iterations {
            // E-step
            let log_activation = g.log_sigmoid(tempered)?;
            let two_var = g.scale(var, 2.0)?;
            let sq_term = g.div(diff2, two_var)?;
            let norm_var = g.scale(var, 2.0 * PI)?;
            let log_norm = g.log(norm_var)?;
            let log_norm = g.scale(log_norm, 0.5)?;
            let neg_ll = g.add(sq_term, log_norm)?;
            let neg_ll = g.sum_axis(neg_ll, 3)?;
            let logits = g.sub(log_activation, neg_ll)?;
            resp = g.softmax(logits, 2)?;
            record(&mut trace, g, logits, |t| &mut t.logits);
        }
    }
    let (mean, activation) = out.expect("at least one iteration");
    let poses = g.add(mean, bias)?;
    let poses = g.reshape(poses, vec![shape.batch, shape.parents, shape.dim])?;
    let activations = g.reshape(activation, vec![shape.batch, shape.parents, 1])?;
    Ok(Capsules { poses, activations })
}
