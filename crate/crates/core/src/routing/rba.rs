use super::{parent_bias, record, vote_shape, weighted_sum, Capsules, RoutingTrace};
use crate::tensor::{Graph, Real, Result, Tensor, Var};

/// Routing-by-agreement.
///
/// Logits start at zero; every iteration couples children to parents with a
/// softmax over parents, squashes the biased weighted vote sum and raises
/// each logit by the dot product of the vote with the new parent pose.
pub fn rba_route<T: Real>(
    g: &mut Graph<T>,
    votes: Var,
    bias: Var,
    iterations: usize,
    mut trace: Option<&mut RoutingTrace<T>>,
) -> Result<Capsules> {
    let shape = vote_shape(g, votes, iterations)?;
    let bias = parent_bias(g, bias, &shape)?;
    let mut logits = g.constant(Tensor::zeros(vec![shape.batch, shape.children, shape.parents, 1]))?;
    let mut parents = None;
    for it in 0..iterations {
        let couplings = g.softmax(logits, 2)?;
        record(&mut trace, g, couplings, |t| &mut t.couplings);
        let s = weighted_sum(g, couplings, votes)?;
        let s = g.add(s, bias)?;
        let v = g.squash(s, 3)?;
        parents = Some(v);
        if it + 1 < iterations {
            let agreement = g.agreement(votes, v)?;
            logits = g.add(logits, agreement)?;
            record(&mut trace, g, logits, |t| &mut t.logits);
        }
    }
    let v = parents.expect("at least one iteration");
    let poses = g.reshape(v, vec![shape.batch, shape.parents, shape.dim])?;
    Capsules::from_poses(g, poses)
}
