//! Network building blocks and the depth-parameterized model.
//!
//! The network is a convolutional stem, a PrimaryCapsules layer, a first
//! routed capsule layer, a capsule sub-network, ClassCapsules and a
//! reconstruction decoder. Depth `D` counts routed capsule layers: the
//! first capsule layer, `S = D - 2` sub-network layers (the first of which
//! adapts the pose dimension) and the class layer. With skips enabled the
//! `S - 1` post-adapter layers are paired into two-layer residual blocks.

mod checkpoint;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::data::DatasetId;
use crate::error::{Error, Result};
use crate::routing::{LambdaSchedule, RoutingKind, ROUTING_ITERATIONS};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{class_capsules, fc_capsule_layer, residual_block, CapsNet, CapsuleLayerParams, Forward, Mask};
pub use params::{BoundParams, ParamStore};

pub const MIN_DEPTH: usize = 3;
pub const MAX_DEPTH: usize = 16;
/// Depth above which the smaller batch size applies.
pub const LARGE_BATCH_MAX_DEPTH: usize = 13;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEEP_BATCH_SIZE: usize = 64;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_RECON_WEIGHT: f64 = 1e-5;
/// Standard deviation of the transformation-matrix initializer.
pub const TRANSFORM_INIT_STD: f64 = 0.2;
/// Initial value of routing bias terms.
pub const ROUTING_BIAS_INIT: f64 = 0.1;

/// Extents of every block of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Network input `[H, W, C]` (the crop, not the stored image).
    pub input: [usize; 3],
    pub stem_kernel: usize,
    pub stem_channels: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub primary_channels: usize,
    pub primary_dim: usize,
    pub first_caps: usize,
    pub first_dim: usize,
    pub hidden_caps: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub class_dim: usize,
    pub decoder_hidden: [usize; 2],
}

impl Architecture {
    /// Full-size network on `24 x 24 x channels` crops.
    pub fn standard(classes: usize, channels: usize) -> Self {
        Self {
            input: [24, 24, channels],
            stem_kernel: 9,
            stem_channels: 256,
            primary_kernel: 9,
            primary_stride: 2,
            primary_channels: 256,
            primary_dim: 8,
            first_caps: 32,
            first_dim: 8,
            hidden_caps: 32,
            hidden_dim: 12,
            classes,
            class_dim: 16,
            decoder_hidden: [512, 1024],
        }
    }

    pub fn for_dataset(id: DatasetId) -> Self {
        Self::standard(id.classes(), id.channels())
    }

    /// A very small network for gradient checks and smoke runs: `6 x 6`
    /// input, 4 primary capsules and 2-capsule hidden layers.
    pub fn tiny(classes: usize, channels: usize) -> Self {
        Self {
            input: [6, 6, channels],
            stem_kernel: 3,
            stem_channels: 3,
            primary_kernel: 3,
            primary_stride: 1,
            primary_channels: 4,
            primary_dim: 4,
            first_caps: 2,
            first_dim: 3,
            hidden_caps: 2,
            hidden_dim: 4,
            classes,
            class_dim: 3,
            decoder_hidden: [5, 6],
        }
    }

    pub fn stem_out(&self) -> [usize; 3] {
        let [h, w, _] = self.input;
        let k = self.stem_kernel;
        [h - k + 1, w - k + 1, self.stem_channels]
    }

    pub fn primary_grid(&self) -> [usize; 2] {
        let [h, w, _] = self.stem_out();
        let (k, s) = (self.primary_kernel, self.primary_stride);
        [(h - k) / s + 1, (w - k) / s + 1]
    }

    pub fn primary_caps(&self) -> usize {
        let [h, w] = self.primary_grid();
        h * w * self.primary_channels / self.primary_dim
    }

    pub fn pixels(&self) -> usize {
        self.input.iter().product()
    }

    fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input;
        if c == 0 || h < self.stem_kernel || w < self.stem_kernel {
            return Err(Error::Config(format!(
                "input {h}x{w}x{c} smaller than the {0}x{0} stem kernel",
                self.stem_kernel
            )));
        }
        let [sh, sw, _] = self.stem_out();
        if sh < self.primary_kernel || sw < self.primary_kernel || self.primary_stride == 0 {
            return Err(Error::Config("stem output smaller than the primary kernel".into()));
        }
        let [ph, pw] = self.primary_grid();
        if self.primary_dim == 0 || (ph * pw * self.primary_channels) % self.primary_dim != 0 {
            return Err(Error::Config(format!(
                "{} primary channels cannot be grouped into capsules of dim {}",
                self.primary_channels, self.primary_dim
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    ConvStem,
    Primary,
    FcCapsule,
    ClassCapsule,
    ResidualBlock,
    Decoder,
}

/// One block of the network with its input and output extents. For
/// capsule layers counts are capsules and dims are pose lengths; for the
/// convolutional blocks and the decoder they are feature counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub name: String,
    pub in_count: usize,
    pub in_dim: usize,
    pub out_count: usize,
    pub out_dim: usize,
    pub routing: Option<RoutingKind>,
    pub iterations: usize,
    /// Names of the wrapped layers for a residual block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner: Vec<String>,
}

impl LayerSpec {
    fn capsule(kind: LayerKind, name: String, input: (usize, usize), output: (usize, usize), routing: RoutingKind) -> Self {
        Self {
            kind,
            name,
            in_count: input.0,
            in_dim: input.1,
            out_count: output.0,
            out_dim: output.1,
            routing: Some(routing),
            iterations: ROUTING_ITERATIONS,
            inner: Vec::new(),
        }
    }

    pub fn is_routed(&self) -> bool {
        matches!(self.kind, LayerKind::FcCapsule | LayerKind::ClassCapsule)
    }
}

/// Everything that determines a model and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dataset: DatasetId,
    pub depth: usize,
    pub use_skip: bool,
    pub routing: RoutingKind,
    pub seed: u64,
    /// Explicit batch size; `None` picks 128, or 64 above depth 13.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub recon_weight: f64,
    pub architecture: Architecture,
    pub lambda: LambdaSchedule,
}

impl ModelConfig {
    pub fn new(dataset: DatasetId, routing: RoutingKind, depth: usize, use_skip: bool) -> Self {
        Self {
            dataset,
            depth,
            use_skip,
            routing,
            seed: 0,
            batch_size: None,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            recon_weight: DEFAULT_RECON_WEIGHT,
            architecture: Architecture::for_dataset(dataset),
            lambda: LambdaSchedule::default(),
        }
    }

    pub fn effective_batch_size(&self) -> usize {
        self.batch_size.unwrap_or(if self.depth > LARGE_BATCH_MAX_DEPTH {
            DEEP_BATCH_SIZE
        } else {
            DEFAULT_BATCH_SIZE
        })
    }

    /// Sub-network size `S = D - 2`.
    pub fn subnetwork_layers(&self) -> usize {
        self.depth - 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::Config(format!(
                "depth {} outside [{MIN_DEPTH}, {MAX_DEPTH}]",
                self.depth
            )));
        }
        if self.architecture.classes != self.dataset.classes() {
            return Err(Error::Config(format!(
                "architecture has {} classes but {} has {}",
                self.architecture.classes,
                self.dataset,
                self.dataset.classes()
            )));
        }
        if self.batch_size == Some(0) || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.recon_weight >= 0.0) {
            return Err(Error::Config("learning rate must be positive and recon weight non-negative".into()));
        }
        self.architecture.validate()?;
        if self.routing == RoutingKind::Sda
            && (self.architecture.first_caps < 2 || self.architecture.hidden_caps < 2 || self.architecture.classes < 2)
        {
            return Err(Error::Config("scaled-distance routing needs at least 2 parents per layer".into()));
        }
        Ok(())
    }

    /// Ordered layer plan for this configuration.
    pub fn plan(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let a = &self.architecture;
        let r = self.routing;
        let [sh, sw, sc] = a.stem_out();
        let [ph, pw] = a.primary_grid();
        let mut plan = vec![
            LayerSpec {
                kind: LayerKind::ConvStem,
                name: "stem".into(),
                in_count: a.input[0] * a.input[1],
                in_dim: a.input[2],
                out_count: sh * sw,
                out_dim: sc,
                routing: None,
                iterations: 0,
                inner: Vec::new(),
            },
            LayerSpec {
                kind: LayerKind::Primary,
                name: "primary".into(),
                in_count: sh * sw,
                in_dim: sc,
                out_count: a.primary_caps(),
                out_dim: a.primary_dim,
                routing: None,
                iterations: 0,
                inner: Vec::new(),
            },
            LayerSpec::capsule(
                LayerKind::FcCapsule,
                "caps0".into(),
                (a.primary_caps(), a.primary_dim),
                (a.first_caps, a.first_dim),
                r,
            ),
            LayerSpec::capsule(
                LayerKind::FcCapsule,
                "caps1".into(),
                (a.first_caps, a.first_dim),
                (a.hidden_caps, a.hidden_dim),
                r,
            ),
        ];
        debug_assert_eq!(ph * pw * a.primary_channels / a.primary_dim, a.primary_caps());
        let hidden = (a.hidden_caps, a.hidden_dim);
        let hidden_layers: Vec<LayerSpec> = (0..self.subnetwork_layers() - 1)
            .map(|k| LayerSpec::capsule(LayerKind::FcCapsule, format!("caps{}", k + 2), hidden, hidden, r))
            .collect();
        let mut rest = hidden_layers.into_iter().peekable();
        while let Some(first) = rest.next() {
            match (self.use_skip, rest.peek()) {
                (true, Some(_)) => {
                    let second = rest.next().expect("peeked");
                    plan.push(LayerSpec {
                        kind: LayerKind::ResidualBlock,
                        name: format!("res[{},{}]", first.name, second.name),
                        in_count: hidden.0,
                        in_dim: hidden.1,
                        out_count: hidden.0,
                        out_dim: hidden.1,
                        routing: Some(r),
                        iterations: ROUTING_ITERATIONS,
                        inner: vec![first.name.clone(), second.name.clone()],
                    });
                    plan.push(first);
                    plan.push(second);
                }
                _ => plan.push(first),
            }
        }
        plan.push(LayerSpec::capsule(
            LayerKind::ClassCapsule,
            "class".into(),
            hidden,
            (a.classes, a.class_dim),
            r,
        ));
        plan.push(LayerSpec {
            kind: LayerKind::Decoder,
            name: "decoder".into(),
            in_count: a.classes,
            in_dim: a.class_dim,
            out_count: a.pixels(),
            out_dim: 1,
            routing: None,
            iterations: 0,
            inner: Vec::new(),
        });
        Ok(plan)
    }
}

/// Number of layers in a plan that perform routing.
pub fn routed_layer_count(plan: &[LayerSpec]) -> usize {
    plan.iter().filter(|l| l.is_routed()).count()
}
