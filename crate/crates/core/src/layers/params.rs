use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::routing::RoutingKind;
use crate::tensor::{Graph, Real, Tensor, Var};

use super::{LayerKind, ModelConfig, ROUTING_BIAS_INIT, TRANSFORM_INIT_STD};

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialization for every layer of `config`.
    ///
    /// Transformation matrices ~ N(0, 0.2), routing biases 0.1, EM betas 0,
    /// convolution and dense kernels Glorot-uniform with zero biases.
    /// Parameters are drawn in plan order, which does not depend on
    /// `use_skip`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let plan = config.plan()?;
        let a = &config.architecture;
        let mut rng = crate::data::epoch_rng(config.seed, 0, 0);
        let mut store = Self::new();
        for spec in &plan {
            match spec.kind {
                LayerKind::ConvStem => {
                    store.insert_conv(&mut rng, "stem", a.stem_kernel, a.input[2], a.stem_channels);
                }
                LayerKind::Primary => {
                    store.insert_conv(&mut rng, "primary", a.primary_kernel, a.stem_channels, a.primary_channels);
                }
                LayerKind::FcCapsule | LayerKind::ClassCapsule => {
                    let normal = Normal::new(0.0, TRANSFORM_INIT_STD).expect("valid std");
                    let dims = vec![spec.in_count, spec.out_count, spec.out_dim, spec.in_dim];
                    let len = dims.iter().product();
                    let w = (0..len).map(|_| T::of(normal.sample(&mut rng))).collect();
                    store.insert(format!("{}.w", spec.name), Tensor::new(dims, w)?)?;
                    store.insert(
                        format!("{}.bias", spec.name),
                        Tensor::full(vec![spec.out_count, spec.out_dim], T::of(ROUTING_BIAS_INIT)),
                    )?;
                    if config.routing == RoutingKind::Em {
                        store.insert(format!("{}.beta_a", spec.name), Tensor::zeros(vec![spec.out_count]))?;
                        store.insert(format!("{}.beta_u", spec.name), Tensor::zeros(vec![spec.out_count]))?;
                    }
                }
                LayerKind::ResidualBlock => {}
                LayerKind::Decoder => {
                    let widths = [
                        a.classes * a.class_dim,
                        a.decoder_hidden[0],
                        a.decoder_hidden[1],
                        a.pixels(),
                    ];
                    for (k, w) in widths.windows(2).enumerate() {
                        store.insert_dense(&mut rng, &format!("decoder.fc{}", k + 1), w[0], w[1]);
                    }
                }
            }
        }
        Ok(store)
    }

    fn insert_conv(&mut self, rng: &mut ChaCha8Rng, name: &str, k: usize, cin: usize, cout: usize) {
        let w = glorot(rng, vec![k, k, cin, cout], k * k * cin, k * k * cout);
        self.insert(format!("{name}.w"), w).expect("fresh name");
        self.insert(format!("{name}.b"), Tensor::zeros(vec![cout])).expect("fresh name");
    }

    fn insert_dense(&mut self, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
        let w = glorot(rng, vec![fan_in, fan_out], fan_in, fan_out);
        self.insert(format!("{name}.w"), w).expect("fresh name");
        self.insert(format!("{name}.b"), Tensor::zeros(vec![1, fan_out])).expect("fresh name");
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Registers every parameter on `g`; `trainable` selects whether
    /// gradients are collected.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(BoundParams {
            vars,
            index: self.index.clone(),
        })
    }
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, dims: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = dims.iter().product();
    let data = (0..len).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
    Tensor::new(dims, data).expect("extents match")
}

/// Graph variables for a [`ParamStore`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetId;

    #[test]
    fn skip_does_not_change_initialization() {
        for routing in RoutingKind::ALL {
            let mut cfg = ModelConfig::new(DatasetId::Mnist, routing, 7, false);
            cfg.seed = 9;
            let plain = ParamStore::<f32>::init(&cfg).unwrap();
            cfg.use_skip = true;
            let skip = ParamStore::<f32>::init(&cfg).unwrap();
            assert_eq!(plain, skip);
        }
    }

    #[test]
    fn transform_weights_follow_requested_normal() {
        let cfg = ModelConfig::new(DatasetId::Mnist, RoutingKind::Rba, 3, false);
        let store = ParamStore::<f64>::init(&cfg).unwrap();
        let w = store.get("caps0.w").unwrap();
        assert_eq!(w.dims(), &[512, 32, 8, 8]);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 2e-3, "{mean}");
        assert!((std - 0.2).abs() < 2e-3, "{std}");
        assert!(store.get("caps0.bias").unwrap().data().iter().all(|&b| b == 0.1));
        assert!(store.get("caps0.beta_a").is_none());
    }

    #[test]
    fn em_adds_betas_and_seeds_differ() {
        let mut cfg = ModelConfig::new(DatasetId::Mnist, RoutingKind::Em, 3, false);
        let a = ParamStore::<f32>::init(&cfg).unwrap();
        assert!(a.get("class.beta_u").unwrap().data().iter().all(|&b| b == 0.0));
        assert_eq!(a.get("class.beta_a").unwrap().dims(), &[10]);
        cfg.seed = 1;
        let b = ParamStore::<f32>::init(&cfg).unwrap();
        assert_ne!(a.get("stem.w"), b.get("stem.w"));
        assert_eq!(a.get("decoder.fc3.w").unwrap().dims(), &[1024, 576]);
    }
}
