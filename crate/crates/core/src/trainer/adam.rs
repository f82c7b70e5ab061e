use crate::error::{Error, Result};
use crate::models::{Container, ModelGraph};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter buffer. `step` is the
/// 1-based index of this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert!(step >= 1);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powf(step as f64)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powf(step as f64)));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let mhat = *m * c1;
        let vhat = *v * c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Moment buffers for every parameter of a model, in model order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

const LABEL_PREFIX: &str = "adam/step=";

impl AdamState {
    pub fn new(model: &ModelGraph) -> Self {
        let zeros: Vec<Vec<f32>> = model.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            cfg: AdamConfig::default(),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Every gradient is checked before any parameter
    /// changes, so a non-finite gradient leaves the model untouched.
    pub fn apply(&mut self, model: &mut ModelGraph, grads: &[Vec<f32>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != model.params().len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {} gradients for a model with {}",
                self.m.len(),
                grads.len(),
                model.params().len()
            )));
        }
        for ((name, t), g) in model.params().iter().zip(grads) {
            if g.len() != t.len() {
                return Err(Error::invalid(format!(
                    "gradient for `{name}` has {} values, expected {}",
                    g.len(),
                    t.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        for (i, (_, t)) in model.params_mut().enumerate() {
            adam_update(
                t.data_mut(),
                &grads[i],
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                lr,
                &self.cfg,
            );
        }
        Ok(())
    }

    pub fn to_container(&self, model: &ModelGraph) -> Container {
        let mut entries = Vec::with_capacity(2 * self.m.len());
        for (kind, bufs) in [("m", &self.m), ("v", &self.v)] {
            for ((name, t), buf) in model.params().iter().zip(bufs) {
                entries.push((
                    format!("{kind}/{name}"),
                    Tensor::from_vec(t.shape(), buf.clone()).expect("moment buffer shaped like its parameter"),
                ));
            }
        }
        Container {
            label: format!("{LABEL_PREFIX}{}", self.step),
            entries,
        }
    }

    pub fn from_container(c: &Container, model: &ModelGraph) -> Result<Self> {
        let step = c
            .label
            .strip_prefix(LABEL_PREFIX)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid(format!("`{}` is not an optimizer state", c.label)))?;
        let mut state = AdamState::new(model);
        state.step = step;
        let index = model.param_index();
        let mut seen = vec![[false; 2]; model.params().len()];
        for (name, t) in &c.entries {
            let (kind, pname) = name
                .split_once('/')
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let k = match kind {
                "m" => 0,
                "v" => 1,
                _ => return Err(Error::UnknownParameter(name.clone())),
            };
            let &i = index.get(pname).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if t.shape() != model.params()[i].1.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_optimizer",
                    left: model.params()[i].1.shape(),
                    right: t.shape(),
                });
            }
            let dst = if k == 0 { &mut state.m[i] } else { &mut state.v[i] };
            dst.copy_from_slice(t.data());
            seen[i][k] = true;
        }
        if let Some(i) = seen.iter().position(|s| !(s[0] && s[1])) {
            return Err(Error::MissingParameter(model.params()[i].0.clone()));
        }
        Ok(state)
    }
}
