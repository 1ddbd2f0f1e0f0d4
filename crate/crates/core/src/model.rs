//! Transformer encoder with summed token, position and language embeddings,
//! a tied prediction head and an optional sentence classifier.

use crate::error::{Result, XlmError};
use crate::numerics::{grad_check, AttentionSpec, GradCheckReport, Graph, Real, Tensor, Var};
use crate::rng::Rng;
use crate::streams::{AttentionMode, Batch, Objective, IGNORE};
use crate::subword::TokenId;

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;
const PER_LAYER: usize = 10;
const LAYER_NAMES: [&str; PER_LAYER] = [
    "attn.q", "attn.k", "attn.v", "attn.o", "ff.in", "ff.out", "ln1.gain", "ln1.bias", "ln2.gain",
    "ln2.bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_positions: usize,
    pub languages: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: `d = 64`, 4 heads, 2 layers, dropout 0.1.
    pub fn desk(vocab_size: usize, languages: usize) -> Self {
        ModelConfig {
            vocab_size,
            dim: 64,
            heads: 4,
            layers: 2,
            max_positions: 256,
            languages,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(XlmError::Config(m));
        if self.vocab_size == 0 || self.dim == 0 || self.max_positions == 0 || self.languages == 0 {
            return bad(format!("model sizes must be positive: {self:?}"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn param_names(&self, classes: usize) -> Vec<String> {
        let mut names = vec!["embed.token".to_string(), "embed.position".into(), "embed.language".into()];
        for l in 0..self.layers {
            names.extend(LAYER_NAMES.iter().map(|n| format!("layer{l}.{n}")));
        }
        names.push("head.bias".into());
        if classes > 0 {
            names.push("classifier.weight".into());
            names.push("classifier.bias".into());
        }
        names
    }

    pub fn param_shapes(&self, classes: usize) -> Vec<Vec<usize>> {
        let d = self.dim;
        let mut shapes = vec![
            vec![self.vocab_size, d],
            vec![self.max_positions, d],
            vec![self.languages, d],
        ];
        for _ in 0..self.layers {
            shapes.extend([
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d, 4 * d],
                vec![4 * d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d],
            ]);
        }
        shapes.push(vec![self.vocab_size]);
        if classes > 0 {
            shapes.push(vec![d, classes]);
            shapes.push(vec![classes]);
        }
        shapes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// All parameters in a fixed order (see [`ModelConfig::param_names`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Real> {
    pub config: ModelConfig,
    pub classes: usize,
    pub params: Vec<Tensor<T>>,
}

fn normal_tensor<T: Real>(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.normal() * std)).collect();
    Tensor::new(shape, data).unwrap()
}

impl<T: Real> ModelState<T> {
    /// Normal(0, 0.02) for embeddings and projections; layer-norm gain 1,
    /// bias 0; output bias 0.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes(0);
        let names = config.param_names(0);
        let params = shapes
            .into_iter()
            .zip(&names)
            .map(|(shape, name)| {
                if name.ends_with(".gain") {
                    Tensor::full(shape, T::ONE)
                } else if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    normal_tensor(shape, INIT_STD, rng)
                }
            })
            .collect();
        Ok(ModelState {
            config,
            classes: 0,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, classes: usize, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes(classes);
        if shapes.len() != params.len() {
            return Err(XlmError::Shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((want, p), name) in shapes.iter().zip(&params).zip(config.param_names(classes)) {
            if want.as_slice() != p.shape() {
                return Err(XlmError::Shape(format!("{name}: {want:?} vs {:?}", p.shape())));
            }
        }
        Ok(ModelState {
            config,
            classes,
            params,
        })
    }

    /// Attach a freshly initialized `[d, classes]` head, replacing any
    /// existing one.
    pub fn attach_classifier(&mut self, classes: usize, rng: &mut Rng) -> Result<()> {
        if classes < 2 {
            return Err(XlmError::InvalidArgument(format!("{classes} classes")));
        }
        self.params.truncate(self.config.param_shapes(0).len());
        self.params
            .push(normal_tensor(vec![self.config.dim, classes], INIT_STD, rng));
        self.params.push(Tensor::zeros(vec![classes]));
        self.classes = classes;
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.config.param_names(self.classes)
    }

    pub fn token_table(&self) -> &Tensor<T> {
        &self.params[0]
    }

    pub fn token_table_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[0]
    }

    pub fn language_table_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[2]
    }

    pub fn output_bias_mut(&mut self) -> &mut Tensor<T> {
        let i = 3 + PER_LAYER * self.config.layers;
        &mut self.params[i]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            classes: self.classes,
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Record every parameter on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ModelVars {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        ModelVars {
            config: self.config.clone(),
            classes: self.classes,
            vars,
        }
    }

    /// Eval-mode hidden states `[rows * cols, d]` without gradients.
    pub fn hidden(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let h = vars.forward(&mut g, batch, Mode::Eval, &mut Rng::seed_from_u64(0))?;
        Ok(g.value(h).clone())
    }
}

/// Parameter handles on one graph, in the order of the owning state.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub config: ModelConfig,
    pub classes: usize,
    pub vars: Vec<Var>,
}

impl ModelVars {
    pub fn from_vars(config: ModelConfig, classes: usize, vars: Vec<Var>) -> Result<Self> {
        let want = config.param_shapes(classes).len();
        if vars.len() != want {
            return Err(XlmError::Shape(format!("{} vars for {want} parameters", vars.len())));
        }
        Ok(ModelVars {
            config,
            classes,
            vars,
        })
    }

    fn layer(&self, l: usize, k: usize) -> Var {
        self.vars[3 + PER_LAYER * l + k]
    }

    fn out_bias(&self) -> Var {
        self.vars[3 + PER_LAYER * self.config.layers]
    }

    pub fn token_table(&self) -> Var {
        self.vars[0]
    }

    /// Hidden states `[rows * cols, d]` for a batch.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        batch: &Batch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let cfg = &self.config;
        if let Some(&p) = batch.positions.iter().find(|&&p| p as usize >= cfg.max_positions) {
            return Err(XlmError::InvalidArgument(format!(
                "position {p} beyond the {} learned positions",
                cfg.max_positions
            )));
        }
        if let Some(&l) = batch.languages.iter().find(|&&l| l as usize >= cfg.languages) {
            return Err(XlmError::InvalidArgument(format!(
                "language {l} beyond the {} language embeddings",
                cfg.languages
            )));
        }
        let ids = |v: &[u32]| v.iter().map(|&x| x as usize).collect::<Vec<_>>();
        let tok = g.embedding(self.vars[0], &ids(&batch.tokens))?;
        let pos = g.embedding(self.vars[1], &ids(&batch.positions))?;
        let lang = g.embedding(self.vars[2], &ids(&batch.languages))?;
        let x = g.add(tok, pos)?;
        let mut x = g.add(x, lang)?;
        let p = if mode == Mode::Train { cfg.dropout } else { 0.0 };
        x = g.dropout(x, p, rng);
        let spec = AttentionSpec {
            batch: batch.rows,
            seq: batch.cols,
            heads: cfg.heads,
            causal: batch.attention == AttentionMode::Causal,
            key_mask: batch.pad_mask.clone(),
        };
        for l in 0..cfg.layers {
            let q = g.matmul(x, self.layer(l, 0))?;
            let k = g.matmul(x, self.layer(l, 1))?;
            let v = g.matmul(x, self.layer(l, 2))?;
            let a = g.attention(q, k, v, spec.clone())?;
            let a = g.matmul(a, self.layer(l, 3))?;
            let a = g.dropout(a, p, rng);
            let r = g.add(x, a)?;
            let h = g.layer_norm(r, self.layer(l, 6), self.layer(l, 7), LN_EPS)?;
            let f = g.matmul(h, self.layer(l, 4))?;
            let f = g.gelu(f);
            let f = g.matmul(f, self.layer(l, 5))?;
            let f = g.dropout(f, p, rng);
            let r = g.add(h, f)?;
            x = g.layer_norm(r, self.layer(l, 8), self.layer(l, 9), LN_EPS)?;
        }
        Ok(x)
    }

    /// Tied prediction head over selected hidden rows:
    /// `hidden[rows] · token_tableᵀ + bias`.
    pub fn lm_logits<T: Real>(&self, g: &mut Graph<T>, hidden: Var, rows: &[usize]) -> Result<Var> {
        let h = g.embedding(hidden, rows)?;
        let logits = g.matmul_bt(h, self.vars[0])?;
        g.add_row(logits, self.out_bias())
    }

    /// First hidden state of every row: `[rows, d]`.
    pub fn sentence_representation<T: Real>(
        &self,
        g: &mut Graph<T>,
        hidden: Var,
        batch_rows: usize,
        cols: usize,
    ) -> Result<Var> {
        let firsts: Vec<usize> = (0..batch_rows).map(|r| r * cols).collect();
        g.embedding(hidden, &firsts)
    }

    pub fn classify<T: Real>(&self, g: &mut Graph<T>, representation: Var) -> Result<Var> {
        if self.classes == 0 {
            return Err(XlmError::InvalidArgument("model has no classifier head".into()));
        }
        let n = self.vars.len();
        let z = g.matmul(representation, self.vars[n - 2])?;
        g.add_row(z, self.vars[n - 1])
    }

    /// Mean cross-entropy over the batch's non-ignored targets.
    pub fn lm_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        batch: &Batch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (rows, targets) = target_rows(batch);
        if rows.is_empty() {
            return Err(XlmError::Empty("batch has no targets".into()));
        }
        let h = self.forward(g, batch, mode, rng)?;
        let logits = self.lm_logits(g, h, &rows)?;
        g.cross_entropy(logits, &targets)
    }

    /// Cross-entropy of the classifier on each row's first hidden state.
    pub fn classification_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        batch: &Batch,
        labels: &[i32],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let h = self.forward(g, batch, mode, rng)?;
        let rep = self.sentence_representation(g, h, batch.rows, batch.cols)?;
        let logits = self.classify(g, rep)?;
        g.cross_entropy(logits, labels)
    }
}

/// Flat cell indices carrying a target, with those targets.
pub fn target_rows(batch: &Batch) -> (Vec<usize>, Vec<i32>) {
    batch
        .targets
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != IGNORE)
        .map(|(i, &t)| (i, t))
        .unzip()
}

/// Central-difference check of the full loss of a small 2-layer model
/// (language-model head plus a 2-class classifier) over every parameter,
/// at a random point drawn from `seed`.
pub fn model_grad_check(seed: u64, objective: Objective) -> Result<GradCheckReport> {
    let config = ModelConfig {
        vocab_size: 9,
        dim: 4,
        heads: 2,
        layers: 2,
        max_positions: 6,
        languages: 2,
        dropout: 0.0,
    };
    let mut rng = Rng::seed_from_u64(seed);
    let mut state = ModelState::<f64>::init(config.clone(), &mut rng)?;
    state.attach_classifier(2, &mut rng)?;
    for (name, p) in state.names().iter().zip(state.params.iter_mut()) {
        let base = if name.ends_with(".gain") { 1.0 } else { 0.0 };
        for x in p.data_mut() {
            *x = base + 0.5 * rng.normal();
        }
    }

    let (rows, cols) = (2, 5);
    let mut batch = Batch::new_padded(rows, cols, objective);
    for r in 0..rows {
        let len = cols - r;
        for c in 0..len {
            let i = r * cols + c;
            batch.tokens[i] = (5 + rng.below(4)) as TokenId;
            batch.positions[i] = c as u32;
            batch.languages[i] = ((r + c) % 2) as u32;
            batch.pad_mask[i] = true;
            if c % 2 == r % 2 {
                batch.targets[i] = (5 + rng.below(4)) as i32;
            }
        }
    }
    let labels = [1, 0];
    let classes = state.classes;
    grad_check(
        |g, v| {
            let model = ModelVars::from_vars(config.clone(), classes, v.to_vec())?;
            let mut unused = Rng::seed_from_u64(0);
            let lm = model.lm_loss(g, &batch, Mode::Eval, &mut unused)?;
            let cls = model.classification_loss(g, &batch, &labels, Mode::Eval, &mut unused)?;
            g.add(lm, cls)
        },
        &state.params,
        1e-5,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for objective in [Objective::Clm, Objective::Mlm, Objective::Tlm] {
            let r = model_grad_check(3, objective).unwrap();
            assert!(r.max_rel_error < 1e-4, "{objective:?}: {r:?}");
        }
    }
    use crate::streams::Objective;
    use crate::subword::{BOS, EOS};

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            dim: 8,
            heads: 2,
            layers: 2,
            max_positions: 16,
            languages: 2,
            dropout: 0.0,
        }
    }

    fn batch(tokens: &[u32], objective: Objective) -> Batch {
        let mut b = Batch::new_padded(1, tokens.len(), objective);
        b.tokens.copy_from_slice(tokens);
        for c in 0..tokens.len() {
            b.positions[c] = c as u32;
        }
        b.pad_mask.fill(true);
        b
    }

    fn hidden_row(m: &ModelState<f64>, b: &Batch) -> Vec<f64> {
        m.hidden(b).unwrap().data().to_vec()
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_statistics() {
        let m = ModelState::<f64>::init(ModelConfig::desk(500, 2), &mut Rng::seed_from_u64(1)).unwrap();
        let t = m.token_table().data();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert!((var.sqrt() - 0.02).abs() < 1e-3);
        let names = m.names();
        let gain = names.iter().position(|n| n == "layer0.ln1.gain").unwrap();
        assert!(m.params[gain].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn causal_outputs_ignore_future_tokens() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(2)).unwrap();
        let a = batch(&[5, 6, 7, 8, 9], Objective::Clm);
        let mut b = a.clone();
        b.tokens[3] = 11;
        b.tokens[4] = 10;
        let (ha, hb) = (hidden_row(&m, &a), hidden_row(&m, &b));
        let d = m.config.dim;
        assert_eq!(ha[..3 * d], hb[..3 * d]);
        assert_ne!(ha[3 * d..], hb[3 * d..]);
    }

    #[test]
    fn pad_cells_are_invisible() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(3)).unwrap();
        let mut a = batch(&[BOS, 6, 7, EOS, 0], Objective::Mlm);
        a.pad_mask[4] = false;
        let mut b = a.clone();
        b.tokens[4] = 9;
        let (ha, hb) = (hidden_row(&m, &a), hidden_row(&m, &b));
        let d = m.config.dim;
        for (x, y) in ha[..4 * d].iter().zip(&hb[..4 * d]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_is_repeatable_and_rows_are_independent() {
        let m = ModelState::<f32>::init(tiny(), &mut Rng::seed_from_u64(4)).unwrap();
        let mut two = Batch::new_padded(2, 3, Objective::Mlm);
        two.tokens = vec![5, 6, 7, 8, 9, 10];
        two.positions = vec![0, 1, 2, 0, 1, 2];
        two.pad_mask.fill(true);
        let mut swapped = two.clone();
        swapped.tokens = vec![8, 9, 10, 5, 6, 7];
        let h1 = m.hidden(&two).unwrap();
        assert_eq!(h1, m.hidden(&two).unwrap());
        let h2 = m.hidden(&swapped).unwrap();
        let d = m.config.dim;
        assert_eq!(h1.data()[..3 * d], h2.data()[3 * d..]);
        assert_eq!(h1.data()[3 * d..], h2.data()[..3 * d]);
    }

    #[test]
    fn zeroed_language_table_removes_language_signal() {
        let mut m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(5)).unwrap();
        m.language_table_mut().data_mut().fill(0.0);
        let a = batch(&[5, 6, 7], Objective::Mlm);
        let mut b = a.clone();
        b.languages.fill(1);
        assert_eq!(hidden_row(&m, &a), hidden_row(&m, &b));
    }

    #[test]
    fn rejects_out_of_range_positions_and_languages() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(6)).unwrap();
        let mut b = batch(&[5, 6], Objective::Mlm);
        b.positions[1] = 16;
        assert!(m.hidden(&b).is_err());
        let mut b = batch(&[5, 6], Objective::Mlm);
        b.languages[0] = 2;
        assert!(m.hidden(&b).is_err());
    }

    #[test]
    fn logits_follow_tied_definition() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(7)).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let d = m.config.dim;
        let h: Vec<f64> = (0..d).map(|i| i as f64 * 0.1 - 0.3).collect();
        let hv = g.constant(Tensor::new(vec![1, d], h.clone()).unwrap());
        let logits = vars.lm_logits(&mut g, hv, &[0]).unwrap();
        let table = m.token_table().data();
        for v in 0..m.config.vocab_size {
            let dot: f64 = (0..d).map(|j| h[j] * table[v * d + j]).sum();
            assert!((g.value(logits).data()[v] - dot).abs() < 1e-12);
        }
        let zero = g.constant(Tensor::zeros(vec![1, d]));
        let logits = vars.lm_logits(&mut g, zero, &[0]).unwrap();
        assert!(g.value(logits).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn classifier_shapes_and_absence() {
        let mut m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(8)).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let rep = g.constant(Tensor::zeros(vec![4, 8]));
        assert!(vars.classify(&mut g, rep).is_err());
        m.attach_classifier(3, &mut Rng::seed_from_u64(9)).unwrap();
        let last = m.params.len() - 1;
        m.params[last].data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let rep = g.constant(Tensor::zeros(vec![4, 8]));
        let z = vars.classify(&mut g, rep).unwrap();
        assert_eq!(g.value(z).shape(), &[4, 3]);
        assert_eq!(&g.value(z).data()[3..6], &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn sentence_representation_is_first_state() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(10)).unwrap();
        let b = batch(&[5, 6, 7], Objective::Clm);
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let h = vars
            .forward(&mut g, &b, Mode::Eval, &mut Rng::seed_from_u64(0))
            .unwrap();
        let rep = vars.sentence_representation(&mut g, h, 1, 3).unwrap();
        assert_eq!(g.value(rep).shape(), &[1, 8]);
        assert_eq!(g.value(rep).data(), &g.value(h).data()[..8]);
    }

    #[test]
    fn attention_rows_normalize_under_masks() {
        let m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(11)).unwrap();
        let mut b = batch(&[BOS, 6, 7, 0], Objective::Mlm);
        b.pad_mask[3] = false;
        assert!(m.hidden(&b).unwrap().all_finite());
    }

    #[test]
    fn fine_tuning_reaches_encoder_parameters() {
        let mut m = ModelState::<f64>::init(tiny(), &mut Rng::seed_from_u64(12)).unwrap();
        m.attach_classifier(2, &mut Rng::seed_from_u64(13)).unwrap();
        let b = batch(&[BOS, 6, 7, EOS], Objective::Mlm);
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let loss = vars
            .classification_loss(&mut g, &b, &[1], Mode::Train, &mut Rng::seed_from_u64(0))
            .unwrap();
        g.backward(loss).unwrap();
        let names = m.names();
        for (name, v) in names.iter().zip(&vars.vars) {
            if name.starts_with("layer") && !name.ends_with("ln2.bias") {
                let grad = g.grad(*v).unwrap();
                assert!(grad.iter().any(|&x| x != 0.0), "{name}");
            }
        }
    }
}
