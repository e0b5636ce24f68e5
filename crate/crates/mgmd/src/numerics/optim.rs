use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

/// Optimizer with its accumulated state. Moment buffers are allocated on the
/// first step and shape-mirror the parameters from then on.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> OptimizerState {
        assert!(lr > 0.0, "learning rate must be positive");
        OptimizerState {
            kind: OptKind::Sgd,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> OptimizerState {
        assert!(lr > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        assert!(epsilon > 0.0);
        OptimizerState {
            kind: OptKind::Adam,
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step over a parameter list. Exactly one step-counter
    /// increment per call regardless of how many tensors are updated.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} parameter tensors and {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    detail: format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
                    self.v = self.m.clone();
                }
                let bc1 = 1.0 - self.beta1.powi(self.step as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step as i32);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (((pv, gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clamp every parameter entry into [-c, c]. Used after each critic step in
/// Wasserstein mode.
pub fn clip_weights(params: &mut [Tensor], c: f64) -> Result<()> {
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::Contract(format!("clip bound must be positive, got {c}")));
    }
    for p in params {
        for v in p.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    Ok(())
}
