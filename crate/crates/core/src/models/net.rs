use rand::{Rng, RngCore};

use crate::autodiff::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::features::{embed_batch, FeatureSchema};

use super::config::{Architecture, ModelConfig};
use super::layers::{cin_layer, fm_second_order, mlp, pairwise_inner_products, self_attention};
use super::ModelError;

/// Row-major encoded inputs for one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchInput<'a> {
    pub len: usize,
    /// `len * num_categorical` vocabulary indices.
    pub categorical: &'a [u32],
    /// `len * num_numeric` standardized values.
    pub numeric: &'a [f32],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `±r`, except row 0 (the OOV slot), which starts at zero.
    Embedding(f64),
    Glorot,
}

/// Name, shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

const EMBEDDING_INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, Default)]
struct Layout {
    emb: Vec<ParamId>,
    lin: Vec<ParamId>,
    lin_numeric: Option<ParamId>,
    mlp: Vec<(ParamId, ParamId)>,
    cin: Vec<ParamId>,
    att: Option<[ParamId; 3]>,
    bit_proj: Option<ParamId>,
    vec_proj: Option<ParamId>,
    head: Option<(ParamId, ParamId)>,
}

#[derive(Default)]
struct Registrar {
    specs: Vec<ParamSpec>,
}

impl Registrar {
    fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name: name.into(), shape, init });
        ParamId(self.specs.len() - 1)
    }
}

/// Architecture description: the parameter layout plus the forward pass.
/// Parameter values live in a separate [`ParamStore`] so the same network can
/// run in `f32` for training and `f64` for gradient verification.
#[derive(Clone, Debug)]
pub struct CtrNet {
    config: ModelConfig,
    schema: FeatureSchema,
    specs: Vec<ParamSpec>,
    layout: Layout,
}

impl CtrNet {
    /// `schema` must carry vocabulary sizes for every categorical field.
    pub fn new(config: ModelConfig, schema: &FeatureSchema) -> Result<Self, ModelError> {
        config.validate()?;
        let vocab = schema.vocab_sizes()?;
        let m = vocab.len();
        let n = schema.num_numeric();
        if m < 2 {
            return Err(ModelError::TooFewFields(m));
        }
        let k = config.embedding_dim;
        let names: Vec<&str> = schema.categorical().map(|f| f.name.as_str()).collect();
        let mut reg = Registrar::default();
        let mut layout = Layout::default();
        for (name, &v) in names.iter().zip(&vocab) {
            layout.emb.push(reg.add(format!("emb.{name}"), vec![v, k], Init::Embedding(EMBEDDING_INIT_RANGE)));
        }
        let arch = config.architecture;
        if arch != Architecture::Pnn {
            for (name, &v) in names.iter().zip(&vocab) {
                layout.lin.push(reg.add(format!("lin.{name}"), vec![v, 1], Init::Zeros));
            }
            if n > 0 && arch != Architecture::Difm {
                layout.lin_numeric = Some(reg.add("lin.numeric", vec![n, 1], Init::Zeros));
            }
        }
        let mut width = m * k + n;
        if arch == Architecture::Pnn {
            width += m * (m - 1) / 2;
        }
        for (i, &units) in config.hidden_units.iter().enumerate() {
            let w = reg.add(format!("mlp.{i}.w"), vec![width, units], Init::Glorot);
            let b = reg.add(format!("mlp.{i}.b"), vec![units], Init::Zeros);
            layout.mlp.push((w, b));
            width = units;
        }
        let deep = width;
        let head_inputs = match arch {
            Architecture::Pnn => deep,
            Architecture::DeepFm => deep + 2,
            Architecture::XDeepFm => {
                let mut h_prev = m;
                for (l, &h) in config.cin_layer_sizes.iter().enumerate() {
                    layout.cin.push(reg.add(format!("cin.{l}.w"), vec![h_prev * m, h], Init::Glorot));
                    h_prev = h;
                }
                deep + 1 + config.cin_layer_sizes.iter().sum::<usize>()
            }
            Architecture::Difm => {
                let width = config.attention_heads * config.attention_head_size;
                layout.att = Some([
                    reg.add("att.q", vec![k, width], Init::Glorot),
                    reg.add("att.k", vec![k, width], Init::Glorot),
                    reg.add("att.v", vec![k, width], Init::Glorot),
                ]);
                layout.bit_proj = Some(reg.add("difm.bit_proj.w", vec![deep, m], Init::Glorot));
                layout.vec_proj = Some(reg.add("difm.vec_proj.w", vec![m * width, m], Init::Glorot));
                2
            }
        };
        layout.head = Some((reg.add("head.w", vec![head_inputs, 1], Init::Glorot), reg.add("head.b", vec![1], Init::Zeros)));
        Ok(CtrNet { config, schema: schema.clone(), specs: reg.specs, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_fields(&self) -> usize {
        self.layout.emb.len()
    }

    pub fn num_numeric(&self) -> usize {
        self.schema.num_numeric()
    }

    /// Freshly initialized parameters in layout order.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for spec in &self.specs {
            let numel: usize = spec.shape.iter().product();
            let (bound, zero_prefix) = match spec.init {
                Init::Zeros => (0.0, numel),
                Init::Embedding(r) => (r, spec.shape[1]),
                Init::Glorot => ((6.0 / (spec.shape[0] + spec.shape[spec.shape.len() - 1]) as f64).sqrt(), 0),
            };
            let data = (0..numel)
                .map(|i| if i < zero_prefix { T::zero() } else { T::from_f64_lossy(rng.gen_range(-bound..bound)) })
                .collect();
            store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data));
        }
        store
    }

    /// Checks that `params` has exactly this network's names and shapes, in order.
    pub fn check_params<T: Scalar>(&self, params: &ParamStore<T>) -> Result<(), ModelError> {
        if params.len() != self.specs.len() {
            return Err(ModelError::ParamMismatch(format!("expected {} tensors, found {}", self.specs.len(), params.len())));
        }
        for ((_, name, value), spec) in params.iter().zip(&self.specs) {
            if name != spec.name || value.shape() != spec.shape.as_slice() {
                return Err(ModelError::ParamMismatch(format!(
                    "expected {} {:?}, found {name} {:?}",
                    spec.name,
                    spec.shape,
                    value.shape()
                )));
            }
        }
        Ok(())
    }

    fn numeric_input<T: Scalar>(&self, tape: &mut Tape<T>, batch: &BatchInput) -> Option<Var> {
        let n = self.num_numeric();
        (n > 0).then(|| {
            let data = batch.numeric.iter().map(|&x| T::from_f64_lossy(f64::from(x))).collect();
            tape.input(Tensor::new(vec![batch.len, n], data))
        })
    }

    /// Field embeddings `[batch, fields, dim]`.
    pub fn embeddings<T: Scalar>(&self, params: &ParamStore<T>, tape: &mut Tape<T>, batch: &BatchInput) -> Var {
        let tables: Vec<Var> = self.layout.emb.iter().map(|&id| tape.param(params, id)).collect();
        embed_batch(tape, &tables, batch.categorical)
    }

    /// Per-field first-order weights `[batch, fields]`.
    fn field_weights<T: Scalar>(&self, params: &ParamStore<T>, tape: &mut Tape<T>, batch: &BatchInput) -> Var {
        let tables: Vec<Var> = self.layout.lin.iter().map(|&id| tape.param(params, id)).collect();
        let w = embed_batch(tape, &tables, batch.categorical);
        tape.reshape(w, &[batch.len, tables.len()])
    }

    fn linear_term<T: Scalar>(&self, params: &ParamStore<T>, tape: &mut Tape<T>, batch: &BatchInput, numeric: Option<Var>) -> Var {
        let w = self.field_weights(params, tape, batch);
        let s = tape.sum_axis(w, 1);
        let mut s = tape.reshape(s, &[batch.len, 1]);
        if let (Some(x), Some(id)) = (numeric, self.layout.lin_numeric) {
            let wn = tape.param(params, id);
            let t = tape.matmul(x, wn);
            s = tape.add(s, t);
        }
        s
    }

    fn deep<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        parts: &[Var],
        rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let input = if parts.len() == 1 { parts[0] } else { tape.concat(parts) };
        let layers: Vec<(Var, Var)> =
            self.layout.mlp.iter().map(|&(w, b)| (tape.param(params, w), tape.param(params, b))).collect();
        mlp(tape, input, &layers, self.config.activation, self.config.dropout, rng)
    }

    /// Logits `[batch, 1]`. Dropout is applied only when `rng` is given.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        batch: &BatchInput,
        rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let (b, m, k) = (batch.len, self.num_fields(), self.config.embedding_dim);
        assert_eq!(batch.categorical.len(), b * m, "categorical buffer does not match batch size");
        assert_eq!(batch.numeric.len(), b * self.num_numeric(), "numeric buffer does not match batch size");
        let e = self.embeddings(params, tape, batch);
        let numeric = self.numeric_input(tape, batch);
        let flat = tape.reshape(e, &[b, m * k]);
        let mut deep_in = vec![flat];
        let components = match self.config.architecture {
            Architecture::Pnn => {
                deep_in.push(pairwise_inner_products(tape, e));
                deep_in.extend(numeric);
                vec![self.deep(params, tape, &deep_in, rng)]
            }
            Architecture::DeepFm => {
                deep_in.extend(numeric);
                let lin = self.linear_term(params, tape, batch, numeric);
                let fm = fm_second_order(tape, e);
                vec![lin, fm, self.deep(params, tape, &deep_in, rng)]
            }
            Architecture::XDeepFm => {
                deep_in.extend(numeric);
                let mut parts = vec![self.linear_term(params, tape, batch, numeric)];
                let mut x = e;
                for &id in &self.layout.cin {
                    let w = tape.param(params, id);
                    x = cin_layer(tape, x, e, w);
                    parts.push(tape.sum_axis(x, 2));
                }
                parts.push(self.deep(params, tape, &deep_in, rng));
                parts
            }
            Architecture::Difm => {
                deep_in.extend(numeric);
                let factors = self.difm_factors(params, tape, e, &deep_in, rng);
                let w = self.field_weights(params, tape, batch);
                return self.difm_head(params, tape, e, w, factors);
            }
        };
        self.head(params, tape, &components)
    }

    fn head<T: Scalar>(&self, params: &ParamStore<T>, tape: &mut Tape<T>, components: &[Var]) -> Var {
        let (w, b) = self.layout.head.expect("head registered");
        let z = if components.len() == 1 { components[0] } else { tape.concat(components) };
        let w = tape.param(params, w);
        let b = tape.param(params, b);
        let y = tape.matmul(z, w);
        tape.add(y, b)
    }

    /// Input-aware factors `[batch, fields]`: bit-wise MLP projection plus
    /// vector-wise self-attention projection.
    pub fn difm_factors<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        e: Var,
        deep_in: &[Var],
        rng: Option<&mut dyn RngCore>,
    ) -> Var {
        let b = tape.shape(e)[0];
        let hidden = self.deep(params, tape, deep_in, rng);
        let bit_proj = tape.param(params, self.layout.bit_proj.expect("difm layout"));
        let m_bit = tape.matmul(hidden, bit_proj);
        let [q, k, v] = self.layout.att.expect("difm layout").map(|id| tape.param(params, id));
        let att = self_attention(tape, e, q, k, v, self.config.attention_heads);
        let width = tape.shape(att.output)[1] * tape.shape(att.output)[2];
        let flat = tape.reshape(att.output, &[b, width]);
        let vec_proj = tape.param(params, self.layout.vec_proj.expect("difm layout"));
        let m_vec = tape.matmul(flat, vec_proj);
        tape.add(m_bit, m_vec)
    }

    /// Reweights field embeddings and first-order weights by `factors`, then
    /// feeds the reweighted linear and FM terms to the output layer.
    pub fn difm_head<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        e: Var,
        field_weights: Var,
        factors: Var,
    ) -> Var {
        let shape = tape.shape(e).to_vec();
        let a = tape.reshape(factors, &[shape[0], shape[1], 1]);
        let e2 = tape.mul(e, a);
        let w2 = tape.mul(field_weights, factors);
        let lin = tape.sum_axis(w2, 1);
        let lin = tape.reshape(lin, &[shape[0], 1]);
        let fm = fm_second_order(tape, e2);
        self.head(params, tape, &[lin, fm])
    }

    /// Like [`forward`](Self::forward) for DIFM but with externally supplied factors.
    pub fn difm_forward_with_factors<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        batch: &BatchInput,
        factors: Var,
    ) -> Var {
        assert_eq!(self.config.architecture, Architecture::Difm);
        let e = self.embeddings(params, tape, batch);
        let w = self.field_weights(params, tape, batch);
        self.difm_head(params, tape, e, w, factors)
    }

    /// Plain FM logit on the same parameters: head over `[Σ w_i, fm(E)]`.
    pub fn fm_logit<T: Scalar>(&self, params: &ParamStore<T>, tape: &mut Tape<T>, batch: &BatchInput) -> Var {
        let e = self.embeddings(params, tape, batch);
        let w = self.field_weights(params, tape, batch);
        let lin = tape.sum_axis(w, 1);
        let lin = tape.reshape(lin, &[batch.len, 1]);
        let fm = fm_second_order(tape, e);
        self.head(params, tape, &[lin, fm])
    }

    /// Click probabilities in eval mode, computed in chunks.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, batch: &BatchInput, chunk: usize) -> Vec<f64> {
        let (m, n) = (self.num_fields(), self.num_numeric());
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(batch.len);
        let mut start = 0;
        while start < batch.len {
            let end = (start + chunk).min(batch.len);
            let sub = BatchInput {
                len: end - start,
                categorical: &batch.categorical[start * m..end * m],
                numeric: &batch.numeric[start * n..end * n],
            };
            let mut tape = Tape::new();
            let logits = self.forward(params, &mut tape, &sub, None);
            out.extend(tape.value(logits).data().iter().map(|z| crate::autodiff::sigmoid_f64(z.as_f64())));
            start = end;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FieldSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FieldSpec { vocab_size: Some(4), ..FieldSpec::categorical("a") },
            FieldSpec { vocab_size: Some(3), ..FieldSpec::categorical("b") },
            FieldSpec { vocab_size: Some(5), ..FieldSpec::categorical("c") },
            FieldSpec::numeric("x"),
        ])
        .unwrap()
    }

    fn tiny(arch: Architecture) -> ModelConfig {
        ModelConfig {
            hidden_units: vec![6, 4],
            cin_layer_sizes: vec![3, 2],
            attention_head_size: 4,
            embedding_dim: 3,
            ..ModelConfig::new(arch)
        }
    }

    #[test]
    fn outputs_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in Architecture::ALL {
            let net = CtrNet::new(tiny(arch), &schema()).unwrap();
            let params: ParamStore<f32> = net.init_params(&mut rng);
            net.check_params(&params).unwrap();
            let batch = BatchInput { len: 2, categorical: &[1, 2, 3, 0, 0, 4], numeric: &[0.5, -1.0] };
            let p = net.predict(&params, &batch, 1);
            assert_eq!(p.len(), 2);
            assert!(p.iter().all(|&q| q > 0.0 && q < 1.0), "{arch}: {p:?}");
        }
    }

    #[test]
    fn single_field_is_rejected() {
        let s = FeatureSchema::new(vec![FieldSpec { vocab_size: Some(4), ..FieldSpec::categorical("a") }]).unwrap();
        assert_eq!(CtrNet::new(tiny(Architecture::DeepFm), &s).unwrap_err(), ModelError::TooFewFields(1));
    }

    #[test]
    fn parameter_names() {
        let net = CtrNet::new(tiny(Architecture::Difm), &schema()).unwrap();
        let names: Vec<&str> = net.param_specs().iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&"att.q") && names.contains(&"difm.vec_proj.w") && names.contains(&"lin.c"));
        assert!(!names.contains(&"lin.numeric"));
        assert_eq!(names.last(), Some(&"head.b"));
    }
}
