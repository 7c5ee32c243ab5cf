use super::network::ParamSet;
use super::scalar::Real;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `g += wd·θ; v = μ·v + g; θ -= lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new<P: ParamSet<T>>(params: &P, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: params
                .named_tensors()
                .iter()
                .map(|(_, t)| vec![T::zero(); t.len()])
                .collect(),
        }
    }

    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) {
        let (lr, mu, wd) = (T::lit(self.lr), T::lit(self.momentum), T::lit(self.weight_decay));
        let grads = grads.named_tensors();
        for ((p, (_, g)), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.velocity)
        {
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                let g = g + wd * *p;
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }

    /// Zeroes the momentum of tensors whose name starts with `prefix`.
    pub fn reset_state<P: ParamSet<T>>(&mut self, params: &P, prefix: &str) {
        for ((name, _), v) in params.named_tensors().iter().zip(&mut self.velocity) {
            if name.starts_with(prefix) {
                v.fill(T::zero());
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: ParamSet<T>>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step = T::lit(self.lr / c1);
        let c2_sqrt = T::lit(c2.sqrt());
        let eps = T::lit(self.eps);
        let grads = grads.named_tensors();
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step * *m / ((*v).sqrt() / c2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::Linear;

    fn quadratic_grad(p: &Linear<f64>) -> Linear<f64> {
        // Gradient of 0.5 * ||θ - 1||².
        let mut g = p.zeros_like();
        for (gv, pv) in g.weight.iter_mut().zip(&p.weight) {
            *gv = pv - 1.0;
        }
        for (gv, pv) in g.bias.iter_mut().zip(&p.bias) {
            *gv = pv - 1.0;
        }
        g
    }

    #[test]
    fn sgd_first_step_matches_hand_computation() {
        let mut p = Linear::<f64>::zeros(1, 1);
        p.weight[0] = 3.0;
        let mut opt = Sgd::new(&p, 0.1, 0.9, 0.01);
        let g = quadratic_grad(&p);
        opt.step(&mut p, &g);
        // g = 2 + 0.01·3 = 2.03; v = 2.03; θ = 3 - 0.203.
        assert!((p.weight[0] - 2.797).abs() < 1e-12);
        let g = quadratic_grad(&p);
        opt.step(&mut p, &g);
        let v2 = 0.9 * 2.03 + (1.797 + 0.01 * 2.797);
        assert!((p.weight[0] - (2.797 - 0.1 * v2)).abs() < 1e-12);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut p = Linear::<f64>::zeros(2, 2);
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let g = quadratic_grad(&p);
            opt.step(&mut p, &g);
        }
        assert!(p.weight.iter().chain(&p.bias).all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = Linear::<f64>::zeros(1, 1);
        let mut opt = Adam::new(&p, 1e-3);
        let g = quadratic_grad(&p);
        opt.step(&mut p, &g);
        assert!((p.weight[0] - 1e-3).abs() < 1e-8);
    }
}
