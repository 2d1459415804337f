//! Named, ordered parameter collections and the outer-update arithmetic.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

static AXPY_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of [`param_axpy`] invocations. Audit hook: lets
/// tests assert that plain supervised training never touches the
/// meta-update.
pub fn param_axpy_invocations() -> u64 {
    AXPY_CALLS.load(Ordering::SeqCst)
}

/// Ordered map name -> tensor. Two sets are *congruent* when they hold
/// the same names with the same shapes in the same order; all vector
/// arithmetic requires congruence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Same names, shapes and order.
    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((an, at), (bn, bt))| an == bn && at.shape() == bt.shape())
    }

    pub fn ensure_congruent(&self, other: &ParamSet, context: &str) -> Result<()> {
        if self.congruent(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{context}: parameter sets are not congruent")))
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        for (name, tensor) in self.iter() {
            tensor.ensure_finite(&format!("{context} ({name})"))?;
        }
        Ok(())
    }
}

/// Outer meta-update: `theta - eta * mean_j(theta - theta_j)`, computed
/// as the equivalent interpolation `(1 - eta) * theta + eta * mean_j(theta_j)`
/// so the degenerate cases are exact: `eta = 0` returns `theta`
/// unchanged and `k = 1, eta = 1` returns `theta_1` bit-for-bit.
/// The mean is accumulated in the given task order, so the result does
/// not depend on how the per-task updates were scheduled.
pub fn param_axpy(theta: &ParamSet, others: &[ParamSet], eta: f64) -> Result<ParamSet> {
    AXPY_CALLS.fetch_add(1, Ordering::SeqCst);
    if others.is_empty() {
        return Err(Error::param("param_axpy needs at least one task parameter set"));
    }
    if !eta.is_finite() {
        return Err(Error::param("eta must be finite"));
    }
    for other in others {
        theta.ensure_congruent(other, "param_axpy")?;
    }
    let k = others.len() as f64;
    let mut out = theta.clone();
    for (idx, (_, tensor)) in out.entries.iter_mut().enumerate() {
        let theta_vals = theta.entries[idx].1.data();
        let data = tensor.data_mut();
        for (i, slot) in data.iter_mut().enumerate() {
            let mut sum = 0.0;
            for other in others {
                sum += other.entries[idx].1.data()[i];
            }
            *slot = theta_vals[i] * (1.0 - eta) + (sum / k) * eta;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn congruence_requires_matching_order() {
        let mut a = ParamSet::new();
        a.push("x", Tensor::zeros(vec![2]));
        a.push("y", Tensor::zeros(vec![3]));
        let mut b = ParamSet::new();
        b.push("y", Tensor::zeros(vec![3]));
        b.push("x", Tensor::zeros(vec![2]));
        assert!(!a.congruent(&b));
        assert!(a.congruent(&a.clone()));
    }

    #[test]
    fn axpy_k1_eta1_is_projection() {
        let theta = scalar_set(0.123456789);
        let theta1 = scalar_set(-7.25);
        let out = param_axpy(&theta, &[theta1.clone()], 1.0).unwrap();
        assert_eq!(out, theta1);
    }

    #[test]
    fn axpy_eta0_is_identity() {
        let theta = scalar_set(0.3);
        let out = param_axpy(&theta, &[scalar_set(99.0)], 0.0).unwrap();
        assert_eq!(out.get("w").unwrap().data()[0], 0.3);
    }

    #[test]
    fn axpy_scalar_example() {
        let theta = scalar_set(0.0);
        let out = param_axpy(&theta, &[scalar_set(1.0), scalar_set(3.0)], 0.5).unwrap();
        assert_eq!(out.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn axpy_rejects_incongruent_sets() {
        let theta = scalar_set(0.0);
        let mut other = ParamSet::new();
        other.push("w", Tensor::zeros(vec![2]));
        assert!(param_axpy(&theta, &[other], 0.5).is_err());
    }

    #[test]
    fn axpy_rejects_empty_task_list() {
        assert!(param_axpy(&scalar_set(0.0), &[], 0.5).is_err());
    }
}
