use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Dense, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Dense<T>,
    m: Dense<T>,
    v: Dense<T>,
    step: u64,
}

impl<T: Scalar> Param<T> {
    fn new(value: Dense<T>) -> Self {
        let (r, c) = value.shape();
        Self { value, m: Dense::zeros(r, c), v: Dense::zeros(r, c), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Named trainable tensors together with their AdamW moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

/// AdamW hyper-parameters. Defaults follow the usual `(0.9, 0.999)`, `1e-8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Dense<T>) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Dense<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Dense<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    /// Looks up a parameter that the caller knows exists.
    pub fn expect(&self, name: &str) -> Result<&Dense<T>> {
        self.get(name).ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Dense<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self, name: &str) -> Option<u64> {
        self.params.get(name).map(Param::step)
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    /// Records every parameter on `tape` and returns the handles by name.
    pub fn bind(&self, tape: &mut Tape<T>) -> BTreeMap<String, Var> {
        self.params.iter().map(|(k, p)| (k.clone(), tape.param(k, p.value.clone()))).collect()
    }

    /// `0.5 * Σ ‖θ‖²` over all parameters, recorded on the tape.
    pub fn l2_penalty(tape: &mut Tape<T>, vars: &BTreeMap<String, Var>) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for &v in vars.values() {
            let term = tape.half_sq_norm(v)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        Ok(total)
    }

    /// Largest absolute entry-wise difference against another store with the
    /// same parameter names. Infinite when the name sets or shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.params.len() != other.params.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for (k, p) in &self.params {
            match other.get(k).map(|o| p.value.max_abs_diff(o)) {
                Some(Ok(d)) => worst = worst.max(d.as_f64()),
                _ => return f64::INFINITY,
            }
        }
        worst
    }

    /// Bitwise equality of parameter values (moment buffers ignored).
    pub fn values_bit_equal(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().all(|(k, p)| {
                other.get(k).is_some_and(|o| {
                    o.shape() == p.value.shape()
                        && o.as_slice().iter().zip(p.value.as_slice()).all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
                })
            })
    }

    /// One decoupled-weight-decay Adam update of every parameter.
    pub fn adamw_step(&mut self, grads: &BTreeMap<String, Dense<T>>, opt: &AdamW) -> Result<()> {
        for name in self.params.keys() {
            let g = grads.get(name).ok_or_else(|| Error::contract(format!("no gradient for parameter `{name}`")))?;
            let p = &self.params[name];
            p.value.expect_same_shape(g, "adamw_step")?;
        }
        let (b1, b2) = (T::of(opt.betas.0), T::of(opt.betas.1));
        let lr = T::of(opt.lr);
        let decay = T::one() - lr * T::of(opt.weight_decay);
        let eps = T::of(opt.eps);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let w = p.value.as_mut_slice();
            let m = p.m.as_mut_slice();
            let v = p.v.as_mut_slice();
            for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v).zip(g.as_slice()) {
                *w *= decay;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Dense::scalar(w));
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Dense<f64>> {
        BTreeMap::from([("w".to_string(), Dense::scalar(v))])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = ParamStore::new();
        s.insert("a", Dense::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let before = s.clone();
        let g = BTreeMap::from([("a".to_string(), Dense::zeros(1, 3))]);
        s.adamw_step(&g, &AdamW::new(0.1, 0.0)).unwrap();
        assert_eq!(s.get("a"), before.get("a"));
        assert_eq!(s.step_count("a"), Some(1));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.adamw_step(&grad(1.0), &AdamW::new(0.1, 0.0)).unwrap();
        let w = s.get("w").unwrap().item().unwrap();
        assert!((w - 0.9).abs() < 1e-6, "{w}");
    }

    /// Scalar AdamW written out independently of the store.
    fn reference_adamw_on_square(mut w: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn minimises_square_like_reference() {
        let reference = reference_adamw_on_square(1.0, 0.05, 100);
        assert!(reference.abs() < 0.1);
        let mut s = scalar_store(1.0);
        let opt = AdamW::new(0.05, 0.0);
        for _ in 0..100 {
            let w = s.get("w").unwrap().item().unwrap();
            s.adamw_step(&grad(2.0 * w), &opt).unwrap();
        }
        let w = s.get("w").unwrap().item().unwrap();
        assert!(w.abs() < 0.1);
        assert!((w - reference).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut s = scalar_store(1.0);
        assert!(matches!(s.adamw_step(&BTreeMap::new(), &AdamW::new(0.1, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut s = scalar_store(2.0);
        s.adamw_step(&grad(0.0), &AdamW::new(0.1, 0.5)).unwrap();
        assert!((s.get("w").unwrap().item().unwrap() - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }
}
