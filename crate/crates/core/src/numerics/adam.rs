use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }
}

/// Applies one Adam update. Every parameter must have a gradient.
pub fn adam_step(params: &mut ParamStore, grads: &[Option<Tensor>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradient slots, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        let Some(g) = g else {
            return Err(Error::invalid(format!("adam: no gradient for parameter {}", params.name(id))));
        };
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                ),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let g = grads[i].as_ref().expect("checked above");
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Scales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().flat_map(|g| g.data().iter()).map(|x| x * x).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 250.0] {
            let mut p = single(1.0);
            let mut st = AdamState::new(&p, 0.001);
            adam_step(&mut p, &[Some(Tensor::scalar(g))], &mut st).unwrap();
            let delta = p.tensors()[0].item() - 1.0;
            assert!((delta + 0.001 * g.signum()).abs() < 1e-8, "g={g} delta={delta}");
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p, 0.01);
        let mut prev = 1.0f64;
        for _ in 0..20 {
            let x = p.tensors()[0].item();
            adam_step(&mut p, &[Some(Tensor::scalar(2.0 * x))], &mut st).unwrap();
            let now = p.tensors()[0].item().abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn zero_gradient_keeps_parameter_and_decays_moments() {
        let mut p = single(0.5);
        let mut st = AdamState::new(&p, 0.01);
        adam_step(&mut p, &[Some(Tensor::scalar(0.0))], &mut st).unwrap();
        assert_eq!(p.tensors()[0].item(), 0.5);

        let mut p = single(0.5);
        let mut st = AdamState::new(&p, 0.01);
        adam_step(&mut p, &[Some(Tensor::scalar(1.0))], &mut st).unwrap();
        let (m1, v1) = (st.first_moment(0).item(), st.second_moment(0).item());
        adam_step(&mut p, &[Some(Tensor::scalar(0.0))], &mut st).unwrap();
        assert!((st.first_moment(0).item() - 0.9 * m1).abs() < 1e-15);
        assert!((st.second_moment(0).item() - 0.999 * v1).abs() < 1e-15);
        assert_eq!(st.step_count(), 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p, 0.01);
        let err = adam_step(&mut p, &[None], &mut st).unwrap_err();
        assert!(err.to_string().contains('x'));
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Some(Tensor::scalar(3.0)), Some(Tensor::scalar(4.0))];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let after: f64 = g.iter().flatten().map(|t| t.item().powi(2)).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
