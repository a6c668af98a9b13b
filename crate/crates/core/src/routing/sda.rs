use super::{parent_bias, record, vote_shape, weighted_sum, Capsules, RoutingTrace};
use crate::tensor::{Graph, Real, Result, Tensor, TensorError, Var};

/// Coupling a child should reach with a parent at the mean vote distance.
pub const SDA_TARGET_COUPLING: f64 = 0.9;

/// `log(0.9 (J - 1)) - log(1 - 0.9)`: numerator of the per-child scale.
pub fn sda_scale_numerator(parents: usize) -> f64 {
    (SDA_TARGET_COUPLING * (parents as f64 - 1.0)).ln() - (1.0 - SDA_TARGET_COUPLING).ln()
}

/// Scaled-distance-agreement routing.
///
/// Votes are first capped to the child's activation. Each iteration then
/// couples with a softmax over parents, squashes the biased weighted sum,
/// and sets the logits to `|u_j|i - v_j| * t_i` with the per-child scale
/// `t_i = numerator / (-0.5 * mean_j |u_j|i - v_j|)`, which is negative, so
/// closer parents get larger logits.
///
/// `child_activations` is `B x N x 1`. Needs at least two parents.
pub fn sda_route<T: Real>(
    g: &mut Graph<T>,
    child_activations: Var,
    votes: Var,
    bias: Var,
    iterations: usize,
    mut trace: Option<&mut RoutingTrace<T>>,
) -> Result<Capsules> {
    let shape = vote_shape(g, votes, iterations)?;
    if shape.parents < 2 {
        return Err(TensorError::Invalid(format!(
            "scaled-distance routing needs at least 2 parents, got {}",
            shape.parents
        )));
    }
    if g.dims(child_activations) != [shape.batch, shape.children, 1] {
        return Err(TensorError::ShapeMismatch {
            op: "sda child activations",
            lhs: g.dims(child_activations).to_vec(),
            rhs: vec![shape.batch, shape.children, 1],
        });
    }
    let bias = parent_bias(g, bias, &shape)?;

    let vote_len = g.norm(votes, 3)?;
    let act = g.reshape(child_activations, vec![shape.batch, shape.children, 1, 1])?;
    let capped_len = g.min(act, vote_len)?;
    let factor = g.div(capped_len, vote_len)?;
    let votes = g.mul(votes, factor)?;
    if let Some(t) = trace.as_deref_mut() {
        t.capped_votes = Some(g.value(votes).clone());
    }

    let numerator = sda_scale_numerator(shape.parents);
    let scale_num = g.constant(Tensor::full(vec![1, 1, 1, 1], T::of(-2.0 * numerator)))?;
    let mut logits = g.constant(Tensor::zeros(vec![shape.batch, shape.children, shape.parents, 1]))?;
    let mut parents = None;
    for it in 0..iterations {
        let couplings = g.softmax(logits, 2)?;
        record(&mut trace, g, couplings, |t| &mut t.couplings);
        let s = weighted_sum(g, couplings, votes)?;
        let s = g.add(s, bias)?;
        let v = g.squash(s, 3)?;
        parents = Some(v);
        if it + 1 < iterations || trace.is_some() {
            let dist = g.pair_distance(votes, v)?;
            let total = g.sum_axis(dist, 2)?;
            let mean = g.scale(total, 1.0 / shape.parents as f64)?;
            // numerator / (-0.5 * mean) == (-2 * numerator) / mean
            let t_scale = g.div(scale_num, mean)?;
            logits = g.mul(dist, t_scale)?;
            record(&mut trace, g, t_scale, |t| &mut t.scales);
            record(&mut trace, g, logits, |t| &mut t.logits);
        }
    }
    let v = parents.expect("at least one iteration");
    let poses = g.reshape(v, vec![shape.batch, shape.parents, shape.dim])?;
    Capsules::from_poses(g, poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_parent_scale_closed_form() {
        // mean distance 1: t = (ln 0.9 - ln 0.1) / -0.5 = -2 ln 9
        let t = sda_scale_numerator(2) / (-0.5 * 1.0);
        assert!((t - (-2.0 * 9f64.ln())).abs() < 1e-12);
        assert!((t + 4.394).abs() < 1e-3);
    }
}
