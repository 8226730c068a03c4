use serde::{Deserialize, Serialize};

use super::layers::{ParamGroup, Params};
use super::schedule::poly_lr;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Initial learning rate of each parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRates {
    pub head_weight: f64,
    pub head_bias: f64,
    pub last_weight: f64,
    pub last_bias: f64,
}

impl GroupRates {
    pub fn uniform(lr: f64) -> Self {
        Self { head_weight: lr, head_bias: lr, last_weight: lr, last_bias: lr }
    }

    /// Bias at twice the weight rate; last layer at ten times the head rate.
    pub fn deeplab_style(head_lr: f64) -> Self {
        Self {
            head_weight: head_lr,
            head_bias: 2.0 * head_lr,
            last_weight: 10.0 * head_lr,
            last_bias: 20.0 * head_lr,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::HeadWeight => self.head_weight,
            ParamGroup::HeadBias => self.head_bias,
            ParamGroup::LastWeight => self.last_weight,
            ParamGroup::LastBias => self.last_bias,
        }
    }

    fn all(&self) -> [f64; 4] {
        ParamGroup::ALL.map(|g| self.get(g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr: GroupRates,
    pub max_iter: usize,
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.all().iter().any(|&r| !(r.is_finite() && r >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::Config("adam needs betas in [0,1) and eps > 0".into()));
                }
            }
            OptimizerKind::Sgd { momentum, weight_decay } => {
                if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
                    return Err(Error::Config("sgd needs momentum in [0,1) and weight_decay >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer state for one parameter set.
pub struct Optimizer<S> {
    config: OptimConfig,
    first: Params<S>,
    second: Option<Params<S>>,
    steps: usize,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimConfig, params: &Params<S>) -> Result<Self> {
        config.validate()?;
        let second = matches!(config.optimizer, OptimizerKind::Adam { .. }).then(|| params.zeros_like());
        Ok(Self { first: params.zeros_like(), second, config, steps: 0 })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update with the poly-scheduled rate for iteration `iter`.
    pub fn step(&mut self, params: &mut Params<S>, grads: &Params<S>, iter: usize) -> Result<()> {
        let max_iter = self.config.max_iter;
        self.steps += 1;
        let t = self.steps as i32;
        for (k, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let lr = poly_lr(S::from_f64_lossy(self.config.lr.get(p.group)), iter, max_iter)?;
            match self.config.optimizer {
                OptimizerKind::Sgd { momentum, weight_decay } => {
                    let mu = S::from_f64_lossy(momentum);
                    let wd = if p.group.is_bias() { S::zero() } else { S::from_f64_lossy(weight_decay) };
                    let vel = &mut self.first.tensors[k].data;
                    for ((w, &gw), v) in p.data.iter_mut().zip(&g.data).zip(vel.iter_mut()) {
                        *v = mu * *v + gw + wd * *w;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (b1, b2, eps) = (S::from_f64_lossy(beta1), S::from_f64_lossy(beta2), S::from_f64_lossy(eps));
                    let c1 = S::one() - b1.powi(t);
                    let c2 = S::one() - b2.powi(t);
                    let m = &mut self.first.tensors[k].data;
                    let v = &mut self.second.as_mut().expect("adam state").tensors[k].data;
                    for (((w, &gw), mi), vi) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (S::one() - b1) * gw;
                        *vi = b2 * *vi + (S::one() - b2) * gw * gw;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
