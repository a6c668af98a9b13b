//! Dynamic routing between capsule layers.
//!
//! Every router consumes a vote tensor `B x N x M x d` (child `i`'s
//! prediction for parent `j`) and produces parent capsules. Three variants
//! are provided:
//!
//! * [`rba_route`]: routing-by-agreement, dot-product agreement.
//! * [`sda_route`]: scaled-distance-agreement, inverse-distance agreement
//!   with votes capped by the child's activation.
//! * [`em_route`]: expectation-maximization over a Gaussian mixture of votes,
//!   with separate sigmoid activations.
//!
//! Routers are written against the autodiff [`Graph`] so they are
//! differentiable end to end. An optional [`RoutingTrace`] records the
//! intermediate routing state for inspection.

mod em;
mod rba;
mod sda;

use std::fmt;
use std::str::FromStr;

use crate::tensor::{Graph, Real, Result, Tensor, TensorError, Var};

pub use em::{em_route, EmParams, LambdaSchedule, EM_VARIANCE_FLOOR};
pub use rba::rba_route;
pub use sda::{sda_route, sda_scale_numerator, SDA_TARGET_COUPLING};

/// Iterations used by every routed layer of the network.
pub const ROUTING_ITERATIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingKind {
    Rba,
    Sda,
    Em,
}

impl RoutingKind {
    pub const ALL: [RoutingKind; 3] = [RoutingKind::Rba, RoutingKind::Sda, RoutingKind::Em];

    pub fn as_str(self) -> &'static str {
        match self {
            RoutingKind::Rba => "rba",
            RoutingKind::Sda => "sda",
            RoutingKind::Em => "em",
        }
    }

    /// Whether activations are the pose lengths (as opposed to a separate scalar).
    pub fn length_activations(self) -> bool {
        !matches!(self, RoutingKind::Em)
    }
}

impl fmt::Display for RoutingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoutingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rba" => Ok(RoutingKind::Rba),
            "sda" => Ok(RoutingKind::Sda),
            "em" => Ok(RoutingKind::Em),
            other => Err(format!("unknown routing algorithm `{other}` (expected rba, sda or em)")),
        }
    }
}

/// A bank of capsules on a graph: poses `B x N x d` and activations
/// `B x N x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capsules {
    pub poses: Var,
    pub activations: Var,
}

impl Capsules {
    /// Capsules whose activation is the (stabilized) length of their pose.
    pub fn from_poses<T: Real>(g: &mut Graph<T>, poses: Var) -> Result<Self> {
        let activations = g.norm(poses, 2)?;
        Ok(Self { poses, activations })
    }

    pub fn count<T: Real>(&self, g: &Graph<T>) -> usize {
        g.dims(self.poses)[1]
    }

    pub fn dim<T: Real>(&self, g: &Graph<T>) -> usize {
        g.dims(self.poses)[2]
    }
}

/// Routing state captured at every iteration.
#[derive(Debug, Clone, Default)]
pub struct RoutingTrace<T> {
    /// Couplings `c` (RBA/SDA) or responsibilities `R` (EM) used by each
    /// iteration, `B x N x M x 1`.
    pub couplings: Vec<Tensor<T>>,
    /// Agreement logits after each update, `B x N x M x 1`.
    pub logits: Vec<Tensor<T>>,
    /// SDA scale factors `t_i`, `B x N x 1 x 1`.
    pub scales: Vec<Tensor<T>>,
    /// SDA votes after capping, `B x N x M x d`.
    pub capped_votes: Option<Tensor<T>>,
    /// EM per-parent variances, `B x 1 x M x d`.
    pub variances: Vec<Tensor<T>>,
    /// EM parent activations per iteration, `B x 1 x M x 1`.
    pub parent_activations: Vec<Tensor<T>>,
}

pub(crate) fn record<T: Real>(
    trace: &mut Option<&mut RoutingTrace<T>>,
    g: &Graph<T>,
    v: Var,
    pick: fn(&mut RoutingTrace<T>) -> &mut Vec<Tensor<T>>,
) {
    if let Some(t) = trace.as_deref_mut() {
        pick(t).push(g.value(v).clone());
    }
}

pub(crate) struct VoteShape {
    pub batch: usize,
    pub children: usize,
    pub parents: usize,
    pub dim: usize,
}

pub(crate) fn vote_shape<T: Real>(g: &Graph<T>, votes: Var, iterations: usize) -> Result<VoteShape> {
    if iterations == 0 {
        return Err(TensorError::Invalid("routing needs at least one iteration".into()));
    }
    match *g.dims(votes) {
        [batch, children, parents, dim] => Ok(VoteShape {
            batch,
            children,
            parents,
            dim,
        }),
        ref other => Err(TensorError::ShapeMismatch {
            op: "routing votes",
            lhs: other.to_vec(),
            rhs: vec![0, 0, 0, 0],
        }),
    }
}

/// Reshapes a per-parent `M x d` bias for broadcasting against `B x 1 x M x d`.
pub(crate) fn parent_bias<T: Real>(g: &mut Graph<T>, bias: Var, shape: &VoteShape) -> Result<Var> {
    if g.dims(bias) != [shape.parents, shape.dim] {
        return Err(TensorError::ShapeMismatch {
            op: "parent bias",
            lhs: g.dims(bias).to_vec(),
            rhs: vec![shape.parents, shape.dim],
        });
    }
    g.reshape(bias, vec![1, 1, shape.parents, shape.dim])
}

/// `s_j = sum_i c_ij * u_j|i`, shape `B x 1 x M x d`.
pub(crate) fn weighted_sum<T: Real>(g: &mut Graph<T>, couplings: Var, votes: Var) -> Result<Var> {
    g.weighted_sum(couplings, votes)
}
