//! Bias-corrected Adam.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    name: String,
}

impl AdamState {
    pub fn new(name: impl Into<String>, num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            name: name.into(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Applies one update in place. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "{}: optimizer tracks {} parameters, got {} params / {} grads",
                self.name,
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}[{i}]", self.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / bc1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step_size * *m / ((*v / bc2).sqrt() + self.eps);
        }
        Ok(())
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        use crate::checkpoint::{put_f64, put_str, put_u64};
        put_str(out, &self.name);
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            put_f64(out, x);
        }
        put_u64(out, self.step);
        put_u64(out, self.m.len() as u64);
        for x in self.m.iter().chain(&self.v) {
            put_f64(out, *x);
        }
    }

    pub(crate) fn read(bytes: &mut &[u8]) -> Result<Self> {
        use crate::checkpoint::{take_f64, take_str, take_u64};
        let name = take_str(bytes)?;
        let lr = take_f64(bytes)?;
        let beta1 = take_f64(bytes)?;
        let beta2 = take_f64(bytes)?;
        let eps = take_f64(bytes)?;
        let step = take_u64(bytes)?;
        let n = take_u64(bytes)? as usize;
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(take_f64(bytes)?);
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(take_f64(bytes)?);
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
            name,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new("p", 2, 0.1);
        let mut p = [1.0, -2.0];
        st.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut st = AdamState::new("p", 3, 0.01);
        let mut p = [0.0, 0.0, 0.0];
        st.step(&mut p, &[3.0, -0.5, 1e-3]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-8);
        assert!((p[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn minimizes_squared_norm() {
        let mut st = AdamState::new("p", 2, 0.1);
        let mut p = [1.0, 1.0];
        for _ in 0..100 {
            let g = [2.0 * p[0], 2.0 * p[1]];
            st.step(&mut p, &g).unwrap();
        }
        let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();

        // independent scalar recursion for one coordinate
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0] - x).abs() < 1e-12);
        assert!(norm < 0.05, "{norm}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut st = AdamState::new("critic0", 2, 0.1);
        let mut p = [0.0, 0.0];
        let err = st.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("critic0[1]"), "{err}");
        assert_eq!(st.step_count(), 0);
    }
}
