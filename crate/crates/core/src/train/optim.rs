use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied as `lr * weight_decay * p`.
    pub weight_decay: f64,
}

/// Adam with decoupled weight decay over named parameters.
pub struct Adam {
    cfg: AdamConfig,
    moments: BTreeMap<String, (Tensor, Tensor)>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            moments: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, vars: &BTreeMap<String, Var>, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (name, var) in vars {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = match self.moments.get(name) {
                Some(mv) => mv.clone(),
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let g = g.detach();
            let m = ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?.detach();
            let v = ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?.detach();
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let p = var.as_tensor();
            let update = (m_hat.div(&(v_hat.sqrt()? + c.eps)?)? + (p * c.weight_decay)?)?;
            var.set(&p.sub(&(update * lr)?)?.detach())?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }
}

/// Gradients keyed by parameter path; parameters without a gradient are omitted.
pub fn collect_grads(vars: &BTreeMap<String, Var>, store: &GradStore) -> BTreeMap<String, Tensor> {
    vars.iter()
        .filter_map(|(k, v)| store.get(v.as_tensor()).map(|g| (k.clone(), g.detach())))
        .collect()
}

/// Rescales gradients to global L2 norm at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> Result<f64> {
    let mut sq = 0f64;
    for g in grads.values() {
        sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {norm}")));
    }
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for g in grads.values_mut() {
            *g = (&*g * scale)?;
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar_var(x: f64) -> (BTreeMap<String, Var>, Var) {
        let v = Var::from_tensor(&Tensor::new(&[x], &Device::Cpu).unwrap()).unwrap();
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), v.clone());
        (m, v)
    }

    #[test]
    fn adam_matches_closed_form_on_quadratic() {
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-5,
        };
        let (vars, x) = scalar_var(1.0);
        let mut opt = Adam::new(cfg);
        let lr = 1e-3;
        // oracle state
        let (mut xo, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let loss = x.as_tensor().affine(1.0, -3.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = collect_grads(&vars, &loss.backward().unwrap());
            opt.step(&vars, &grads, lr).unwrap();

            let g = 2.0 * (xo - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.98 * v + 0.02 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.98f64.powi(t));
            xo -= lr * (mh / (vh.sqrt() + 1e-9) + 1e-5 * xo);
            let got = x.as_tensor().to_vec1::<f64>().unwrap()[0];
            assert!((got - xo).abs() < 1e-12, "step {t}: {got} vs {xo}");
        }
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::new(&[3.0f64, 0.0], &Device::Cpu).unwrap());
        g.insert("b".to_string(), Tensor::new(&[4.0f64], &Device::Cpu).unwrap());
        let n = clip_grad_norm(&mut g, 1.0).unwrap();
        assert!((n - 5.0).abs() < 1e-12);
        let after: f64 = g
            .values()
            .map(|t| t.sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap())
            .sum::<f64>()
            .sqrt();
        assert!((after - 1.0).abs() < 1e-6);
        let mut bad = BTreeMap::new();
        bad.insert("a".to_string(), Tensor::new(&[f64::NAN], &Device::Cpu).unwrap());
        assert!(matches!(clip_grad_norm(&mut bad, 1.0), Err(Error::Numerical(_))));
    }
}
