//! Margin and reconstruction losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    /// Weight of the absent-class term.
    pub lambda_down: f64,
    pub recon_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
            recon_weight: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) || !(self.recon_weight >= 0.0) {
            return Err(Error::Config(format!("invalid loss configuration {self:?}")));
        }
        Ok(())
    }
}

/// Batch mean of `sum_k T_k max(0, m+ - a_k)^2 + lambda (1 - T_k) max(0, a_k - m-)^2`
/// for class activations `B x K` or `B x K x 1`.
pub fn margin_loss<T: Real>(g: &mut Graph<T>, activations: Var, labels: &[usize], cfg: &LossConfig) -> Result<Var> {
    let dims = g.dims(activations).to_vec();
    let (batch, classes) = match dims[..] {
        [b, k] | [b, k, 1] => (b, k),
        _ => return Err(Error::Config(format!("class activations must be B x K, got {dims:?}"))),
    };
    if labels.len() != batch {
        return Err(Error::Config(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let mut present = Tensor::zeros(dims.clone());
    let mut absent = Tensor::full(dims, T::of(cfg.lambda_down));
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Config(format!("label {label} out of range for {classes} classes")));
        }
        present.data_mut()[b * classes + label] = T::one();
        absent.data_mut()[b * classes + label] = T::zero();
    }
    let present = g.constant(present)?;
    let absent = g.constant(absent)?;

    let neg_a = g.neg(activations)?;
    let short = g.offset(neg_a, cfg.m_plus)?;
    let short = g.relu(short)?;
    let short = g.square(short)?;
    let over = g.offset(activations, -cfg.m_minus)?;
    let over = g.relu(over)?;
    let over = g.square(over)?;
    let pos = g.mul(present, short)?;
    let neg = g.mul(absent, over)?;
    let per = g.add(pos, neg)?;
    let total = g.sum(per)?;
    Ok(g.scale(total, 1.0 / batch as f64)?)
}

/// Batch mean of the per-sample sum of squared differences.
pub fn reconstruction_loss<T: Real>(g: &mut Graph<T>, reconstruction: Var, target: Var) -> Result<Var> {
    let (rd, td) = (g.dims(reconstruction).to_vec(), g.dims(target).to_vec());
    if rd != td || rd.is_empty() {
        return Err(Error::Config(format!("reconstruction {rd:?} does not match target {td:?}")));
    }
    let diff = g.sub(reconstruction, target)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    Ok(g.scale(total, 1.0 / rd[0] as f64)?)
}

/// `margin + recon_weight * reconstruction`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, margin: Var, reconstruction: Option<Var>, cfg: &LossConfig) -> Result<Var> {
    match reconstruction {
        Some(r) if cfg.recon_weight != 0.0 => {
            let weighted = g.scale(r, cfg.recon_weight)?;
            Ok(g.add(margin, weighted)?)
        }
        _ => Ok(margin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn margin(acts: Vec<f64>, k: usize, labels: &[usize]) -> f64 {
        let mut g = Graph::<f64>::new();
        let b = acts.len() / k;
        let a = g.constant(Tensor::new(vec![b, k], acts).unwrap()).unwrap();
        let l = margin_loss(&mut g, a, labels, &LossConfig::default()).unwrap();
        g.value(l).item()
    }

    #[test]
    fn margin_closed_forms() {
        assert_eq!(margin(vec![0.95, 0.05, 0.1], 3, &[0]), 0.0);
        assert!((margin(vec![0.0; 10], 10, &[4]) - 0.81).abs() < 1e-12);
        assert!((margin(vec![0.95, 0.6, 0.0], 3, &[0]) - 0.125).abs() < 1e-12);
        // batch mean
        assert!((margin(vec![0.0, 0.0, 0.95, 0.0], 2, &[0, 0]) - 0.405).abs() < 1e-12);
    }

    #[test]
    fn margin_rejects_bad_labels() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![1, 3])).unwrap();
        assert!(margin_loss(&mut g, a, &[3], &LossConfig::default()).is_err());
        assert!(margin_loss(&mut g, a, &[0, 1], &LossConfig::default()).is_err());
    }

    #[test]
    fn reconstruction_closed_forms() {
        let mut g = Graph::<f64>::new();
        let r = g.constant(Tensor::new(vec![1, 4], vec![0.5, 0.2, 0.2, 0.0]).unwrap()).unwrap();
        let t = g.constant(Tensor::new(vec![1, 4], vec![0.0, 0.2, 0.2, 0.0]).unwrap()).unwrap();
        let l = reconstruction_loss(&mut g, r, t).unwrap();
        assert!((g.value(l).item() - 0.25).abs() < 1e-12);
        let z = reconstruction_loss(&mut g, r, r).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        let m = g.constant(Tensor::scalar(0.3)).unwrap();
        let total = total_loss(&mut g, m, Some(l), &LossConfig::default()).unwrap();
        assert!((g.value(total).item() - (0.3 + 0.25e-5)).abs() < 1e-15);
        let bad = g.constant(Tensor::zeros(vec![1, 3])).unwrap();
        assert!(reconstruction_loss(&mut g, r, bad).is_err());
    }
}
