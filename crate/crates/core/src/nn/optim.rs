use super::param::Module;

/// Adam without weight decay. Moment buffers are laid out in the module's
/// visit order over trainable parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = (self.lr / bc1) as f32;
        let (b1, b2, eps) = (self.beta1 as f32, self.beta2 as f32, self.eps as f32);
        let bc2_sqrt = bc2.sqrt() as f32;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut slot = 0usize;
        model.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            if m_all.len() <= slot {
                m_all.push(vec![0.0; p.len()]);
                v_all.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut m_all[slot], &mut v_all[slot]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
            slot += 1;
        });
    }
}

/// Exponential decay: `initial * gamma^epoch`.
pub fn exponential_lr(initial: f64, gamma: f64, epoch: usize) -> f64 {
    initial * gamma.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Param;

    struct Quad(Param);
    impl Module for Quad {
        fn visit(&self, f: &mut dyn FnMut(&Param)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quad(Param::new("x", &[2], vec![1.0, -1.0], true));
        q.0.grad = vec![2.0, -0.5];
        let mut adam = Adam::new(0.1);
        adam.step(&mut q);
        assert!((q.0.value[0] - 0.9).abs() < 1e-6);
        assert!((q.0.value[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut q = Quad(Param::new("x", &[1], vec![3.0], true));
        let mut adam = Adam::new(0.05);
        for _ in 0..500 {
            q.0.grad[0] = 2.0 * (q.0.value[0] - 1.0);
            adam.step(&mut q);
        }
        assert!((q.0.value[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn schedule_is_exact_power() {
        assert_eq!(exponential_lr(1e-3, 0.99, 0), 1e-3);
        assert_eq!(exponential_lr(1e-3, 0.5, 3), 1e-3 * 0.125);
    }
}
