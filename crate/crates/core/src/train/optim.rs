use crate::autodiff::ParamStore;

/// Per-epoch decay constant of the SGD learning rate.
pub const LR_DECAY: f64 = 0.05;

/// One decay step taken at the end of epoch `epoch` (1-based):
/// `lr_prev / (1 + 0.05·epoch)`.
pub fn decay_step(lr_prev: f64, epoch: usize) -> f64 {
    lr_prev / (1.0 + LR_DECAY * epoch as f64)
}

/// Learning rate after `epoch` completed epochs, starting from `lr_initial`.
pub fn lr_schedule(lr_initial: f64, epoch: usize) -> f64 {
    (1..=epoch).fold(lr_initial, decay_step)
}

/// Rescales all gradients so their global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, clip_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for t in store.tensors_mut() {
            t.grad_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// `v ← m·v + g; θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64) -> Self {
        let velocity = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { lr, momentum, velocity }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        for (t, v) in store.tensors_mut().zip(&mut self.velocity) {
            let (theta, grad) = t.values_and_grad_mut();
            for ((p, g), v) in theta.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
    }
}

/// Adam whose weight decay shrinks parameters directly instead of entering
/// the gradient moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamDecoupled {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamDecoupled {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let shrink = 1.0 - self.lr * self.weight_decay;
        for ((t, m), v) in store.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let (theta, grad) = t.values_and_grad_mut();
            for (((p, g), m), v) in theta.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p * shrink - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd(SgdMomentum),
    Adam(AdamDecoupled),
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore) {
        match self {
            Optimizer::Sgd(o) => o.step(store),
            Optimizer::Adam(o) => o.step(store),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd(o) => o.lr,
            Optimizer::Adam(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::vector(values.to_vec()).unwrap());
        s.get_mut(id).grad_mut().copy_from_slice(grads);
        s
    }

    fn values(s: &ParamStore) -> Vec<f64> {
        s.iter().flat_map(|(_, _, t)| t.values().to_vec()).collect()
    }

    #[test]
    fn schedule_values() {
        assert!((lr_schedule(0.05, 1) - 0.0476190).abs() < 1e-6);
        assert!((lr_schedule(0.05, 2) - 0.0432900).abs() < 1e-6);
        assert!((lr_schedule(0.05, 3) - 0.0376435).abs() < 1e-6);
        assert_eq!(lr_schedule(0.05, 0), 0.05);
        assert_eq!(lr_schedule(0.0, 7), 0.0);
        assert_eq!(decay_step(lr_schedule(0.05, 2), 3), lr_schedule(0.05, 3));
    }

    #[test]
    fn clipping() {
        let mut s = store_with(&[0.0, 0.0], &[0.6, 0.8]);
        let norm = clip_gradients(&mut s, 0.5);
        assert!((norm - 1.0).abs() < 1e-15);
        let g = s.get(s.find("w").unwrap()).grad().to_vec();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        let mut s = store_with(&[0.0, 0.0], &[0.06, 0.08]);
        clip_gradients(&mut s, 0.5);
        assert_eq!(s.get(s.find("w").unwrap()).grad(), [0.06, 0.08]);
    }

    #[test]
    fn sgd_zero_grad_decays_velocity() {
        let mut s = store_with(&[2.0], &[0.0]);
        let mut opt = SgdMomentum::new(&s, 0.1, 0.9);
        opt.step(&mut s);
        assert_eq!(values(&s), [2.0]);

        let mut s = store_with(&[1.0], &[1.0]);
        let mut opt = SgdMomentum::new(&s, 0.1, 0.9);
        opt.step(&mut s);
        s.zero_grad();
        let v0 = opt.velocity()[0][0];
        opt.step(&mut s);
        assert!((opt.velocity()[0][0] - 0.9 * v0).abs() < 1e-15);
    }

    #[test]
    fn sgd_plain_and_two_step_unroll() {
        let mut s = store_with(&[1.0, -1.0], &[0.5, 2.0]);
        SgdMomentum::new(&s, 0.1, 0.0).step(&mut s);
        assert_eq!(values(&s), [1.0 - 0.05, -1.0 - 0.2]);

        let (lr, g) = (0.05, 0.3);
        let mut s = store_with(&[0.0], &[g]);
        let mut opt = SgdMomentum::new(&s, lr, 0.9);
        opt.step(&mut s);
        opt.step(&mut s);
        // v1 = g, v2 = 0.9·g + g.
        let expected = -(lr * g + lr * (0.9 * g + g));
        assert!((values(&s)[0] - expected).abs() < 1e-15);
        assert!((values(&s)[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grads_no_decay_is_identity() {
        let mut s = store_with(&[1.5, -2.0], &[0.0, 0.0]);
        let mut opt = AdamDecoupled::new(&s, 1e-3, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..3 {
            opt.step(&mut s);
        }
        assert_eq!(values(&s), [1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let lr = 5e-5;
        let mut s = store_with(&[0.0, 0.0, 0.0], &[3.0, -0.02, 700.0]);
        AdamDecoupled::new(&s, lr, 0.9, 0.999, 1e-8, 0.0).step(&mut s);
        for (v, sign) in values(&s).iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * lr).abs() < lr * 1e-5, "{v}");
        }
    }

    /// Independent scalar trajectory: decay applied first, then the moment
    /// update with bias correction.
    fn scalar_adam(theta0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64, wd: f64) -> Vec<f64> {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = Vec::new();
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            theta -= lr * wd * theta;
            theta -= lr * mh / (vh.sqrt() + eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let grads: Vec<f64> = (0..10).map(|k| ((k as f64) * 1.7).sin() * 0.8 + 0.1).collect();
        let (lr, b1, b2, eps, wd) = (1e-2, 0.9, 0.999, 1e-8, 0.01);
        let expected = scalar_adam(0.7, &grads, lr, b1, b2, eps, wd);
        let mut s = store_with(&[0.7], &[0.0]);
        let mut opt = AdamDecoupled::new(&s, lr, b1, b2, eps, wd);
        for (g, e) in grads.iter().zip(&expected) {
            s.tensors_mut().next().unwrap().grad_mut()[0] = *g;
            opt.step(&mut s);
            assert!((values(&s)[0] - e).abs() < 1e-12);
        }
        assert_eq!(opt.steps_taken(), 10);
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded(grads in proptest::collection::vec(-100.0f64..100.0, 1..20), clip in 0.01f64..10.0) {
            let mut s = store_with(&vec![0.0; grads.len()], &grads);
            clip_gradients(&mut s, clip);
            prop_assert!(s.grad_norm() <= clip + 1e-12);
        }

        #[test]
        fn schedule_strictly_decreasing(lr0 in 1e-6f64..10.0, epochs in 1usize..60) {
            let mut prev = lr0;
            for e in 1..=epochs {
                let lr = lr_schedule(lr0, e);
                prop_assert!(lr < prev);
                prev = lr;
            }
        }
    }
}
