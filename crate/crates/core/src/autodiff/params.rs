use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor, TensorError};

/// Ordered collection of named parameters. Serialization and iteration
/// follow insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

/// Name matcher: exact names, or globs where `*` matches any run of
/// characters (`phoneme_encoder.*`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameSelector(String);

impl NameSelector {
    pub fn new(pattern: impl Into<String>) -> Self {
        Self(pattern.into())
    }

    /// Every parameter under a group prefix.
    pub fn group(group: &str) -> Self {
        Self(format!("{group}.*"))
    }

    pub fn matches(&self, name: &str) -> bool {
        glob_match(self.0.as_bytes(), name.as_bytes())
    }
}

fn glob_match(pat: &[u8], s: &[u8]) -> bool {
    match pat.split_first() {
        None => s.is_empty(),
        Some((b'*', rest)) => (0..=s.len()).any(|i| glob_match(rest, &s[i..])),
        Some((c, rest)) => s.first() == Some(c) && glob_match(rest, &s[1..]),
    }
}

/// Group a parameter belongs to: the prefix before the first dot.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Distinct groups in declaration order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for name in self.names() {
            let g = group_of(name);
            if out.last().map(String::as_str) != Some(g) && !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Sets the trainable flag on every matching tensor; returns how many
    /// tensors matched. Freezing also drops any held gradient.
    pub fn set_trainable(&mut self, selector: &NameSelector, flag: bool) -> usize {
        let mut count = 0;
        for (name, t) in self.entries.iter_mut() {
            if selector.matches(name) {
                t.trainable = flag;
                if !flag {
                    t.grad = None;
                }
                count += 1;
            }
        }
        count
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.grad = None;
        }
    }

    /// Registers every parameter as a tape leaf, tracked iff trainable.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>) -> Binding<'_> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.as_dense(), t.trainable))
            .collect();
        Binding { params: self, vars }
    }

    /// Adds tape gradients for bound parameters into their grad buffers.
    pub fn accumulate<F: Real>(&mut self, vars: &[Var], grads: &Gradients<F>) {
        assert_eq!(vars.len(), self.entries.len(), "binding does not match parameter set");
        for ((_, t), v) in self.entries.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*v) {
                t.accumulate_grad(g);
            }
        }
    }

    /// Global L2 norm of all held gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|(_, t)| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Parameter handles on one tape, looked up by name.
#[derive(Debug, Clone)]
pub struct Binding<'p> {
    params: &'p ParameterSet,
    vars: Vec<Var>,
}

impl<'p> Binding<'p> {
    /// Binds caller-provided vars (one per parameter, in order), e.g. 64-bit
    /// leaves for gradient checking.
    pub fn with_vars(params: &'p ParameterSet, vars: Vec<Var>) -> Result<Self, TensorError> {
        if vars.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bind",
                lhs: vec![params.len()],
                rhs: vec![vars.len()],
            });
        }
        Ok(Self { params, vars })
    }

    pub fn var(&self, name: &str) -> Result<Var, TensorError> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }
}

/// Xavier-uniform weights for a matrix-like tensor with the given fans.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let values = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(shape.to_vec(), values).expect("shape product")
}

/// Embedding table drawn from N(0, dim^-0.5).
pub fn normal_embedding<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Tensor {
    let dist = Normal::new(0.0, (dim as f64).powf(-0.5)).expect("positive std");
    let values = (0..rows * dim).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(vec![rows, dim], values).expect("shape product")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dense;

    fn toy() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("phoneme_encoder.w", Tensor::filled(&[1, 1], 1.0)).unwrap();
        p.insert("phoneme_encoder.b", Tensor::filled(&[1], 0.0)).unwrap();
        p.insert("style_encoder.w", Tensor::filled(&[1, 1], 2.0)).unwrap();
        p
    }

    fn loss_and_grads(p: &mut ParameterSet) {
        let mut tape = Tape::<f32>::new();
        let b = p.bind(&mut tape);
        let x = tape.constant(Dense::from_f64(&[1, 1], &[2.0]));
        let w1 = b.var("phoneme_encoder.w").unwrap();
        let w2 = b.var("style_encoder.w").unwrap();
        let bias = b.var("phoneme_encoder.b").unwrap();
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.matmul(h, w2).unwrap();
        let h = tape.add(h, bias).unwrap();
        let y = tape.constant(Dense::from_f64(&[1, 1], &[0.0]));
        let l = tape.mse(h, y, None).unwrap();
        let vars = b.vars().to_vec();
        let g = tape.backward(l).unwrap();
        p.accumulate(&vars, &g);
    }

    #[test]
    fn selectors() {
        let s = NameSelector::new("phoneme_encoder.*");
        assert!(s.matches("phoneme_encoder.block0.w"));
        assert!(!s.matches("style_encoder.w"));
        assert!(NameSelector::new("*.w").matches("style_encoder.w"));
        assert!(NameSelector::new("exact").matches("exact"));
        assert!(!NameSelector::new("exact").matches("exact2"));
    }

    #[test]
    fn freezing_blocks_gradients() {
        let mut p = toy();
        assert_eq!(p.set_trainable(&NameSelector::new("phoneme_encoder.*"), false), 2);
        loss_and_grads(&mut p);
        assert!(p.get("phoneme_encoder.w").unwrap().grad.is_none());
        assert!(p.get("phoneme_encoder.b").unwrap().grad.is_none());
        // d/dw2 (2 * 1 * w2)^2 = 2 * 4 * 2 = 16
        assert_eq!(p.get("style_encoder.w").unwrap().grad.as_deref(), Some(&[16.0f32][..]));
        assert_eq!(p.set_trainable(&NameSelector::new("nothing.*"), false), 0);
    }

    #[test]
    fn gradients_accumulate_until_cleared() {
        let mut p = toy();
        loss_and_grads(&mut p);
        let once: Vec<f32> = p.get("phoneme_encoder.w").unwrap().grad.clone().unwrap();
        loss_and_grads(&mut p);
        let twice = p.get("phoneme_encoder.w").unwrap().grad.clone().unwrap();
        assert_eq!(twice, once.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        p.zero_grad();
        assert!(p.iter().all(|(_, t)| t.grad.is_none()));
    }

    #[test]
    fn freeze_all_then_unfreeze_all_restores() {
        let mut p = toy();
        let before: Vec<bool> = p.iter().map(|(_, t)| t.trainable).collect();
        let all = NameSelector::new("*");
        assert_eq!(p.set_trainable(&all, false), 3);
        assert!(p.iter().all(|(_, t)| !t.trainable));
        p.set_trainable(&all, true);
        assert_eq!(p.iter().map(|(_, t)| t.trainable).collect::<Vec<_>>(), before);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = toy();
        assert_eq!(
            p.insert("style_encoder.w", Tensor::zeros(&[1])),
            Err(TensorError::DuplicateParameter("style_encoder.w".into()))
        );
        assert_eq!(p.groups(), vec!["phoneme_encoder", "style_encoder"]);
    }
}
