use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::RetrieverConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::numerics::{softmax, ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng::{self, Rng};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    proj: Linear,
    role_support: ParamId,
    role_query: ParamId,
    separator: ParamId,
    selector: ParamId,
    encoder: Vec<Block>,
    final_norm: Norm,
    decoder: Vec<Block>,
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut Rng,
    std: f64,
}

impl Builder<'_> {
    fn matrix(&mut self, name: String, rows: usize, cols: usize, identity: bool) -> Result<ParamId> {
        let mut data: Vec<f64> = (0..rows * cols).map(|_| self.std * rng::standard_normal(self.rng)).collect();
        if identity {
            for i in 0..rows.min(cols) {
                data[i * cols + i] += 1.0;
            }
        }
        self.params.add(name, Tensor::matrix(rows, cols, data)?)
    }

    fn constant(&mut self, name: String, len: usize, value: f64) -> Result<ParamId> {
        self.params.add(name, Tensor::filled(&[len], value))
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, identity: bool) -> Result<Linear> {
        Ok(Linear {
            w: self.matrix(format!("{name}.w"), d_in, d_out, identity)?,
            b: self.constant(format!("{name}.b"), d_out, 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm { g: self.constant(format!("{name}.g"), d, 1.0)?, b: self.constant(format!("{name}.b"), d, 0.0)? })
    }

    fn block(&mut self, name: &str, cfg: &RetrieverConfig, identity_qk: bool) -> Result<Block> {
        let dm = cfg.d_model;
        Ok(Block {
            ln1: self.norm(&format!("{name}.ln1"), dm)?,
            attn: Attention {
                q: self.linear(&format!("{name}.attn.q"), dm, dm, identity_qk)?,
                k: self.linear(&format!("{name}.attn.k"), dm, dm, identity_qk)?,
                v: self.linear(&format!("{name}.attn.v"), dm, dm, false)?,
                o: self.linear(&format!("{name}.attn.o"), dm, dm, false)?,
            },
            ln2: self.norm(&format!("{name}.ln2"), dm)?,
            ff1: self.linear(&format!("{name}.ff1"), dm, cfg.d_ff, false)?,
            ff2: self.linear(&format!("{name}.ff2"), cfg.d_ff, dm, false)?,
        })
    }
}

/// Transformer policy over a support pool, conditioned on a query set.
///
/// Support and query embeddings are projected to `d_model`, tagged with a
/// learned role vector and joined around a learned separator token; no
/// positional encodings are used, so the output is equivariant under
/// permutations of the support pool. A pre-norm encoder mixes the whole
/// sequence. A learned selection token is then refined by decoder blocks that
/// cross-attend to the encoder output, and the logit of support item `i` is
/// the scaled dot product of that token with the item's encoder state.
#[derive(Debug, Clone)]
pub struct Retriever {
    config: RetrieverConfig,
    params: ParamSet,
    layout: Layout,
}

impl Retriever {
    /// Builds a model with seeded initialization.
    pub fn new(config: RetrieverConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let mut b = Builder { params: ParamSet::new(), rng: &mut rng, std: config.init_std };
        let dm = config.d_model;
        let ident = config.identity_init;
        let proj = b.linear("proj", config.d_in, dm, ident)?;
        let role_support = b.constant("role.support".into(), dm, 0.0)?;
        let role_query = b.constant("role.query".into(), dm, 0.0)?;
        let separator = b.constant("separator".into(), dm, 0.0)?;
        let selector = b.constant("selector".into(), dm, 0.0)?;
        let encoder =
            (0..config.n_encoder).map(|l| b.block(&format!("encoder.{l}"), &config, ident)).collect::<Result<_>>()?;
        let final_norm = b.norm("encoder.norm", dm)?;
        let decoder =
            (0..config.n_decoder).map(|l| b.block(&format!("decoder.{l}"), &config, false)).collect::<Result<_>>()?;
        let layout = Layout { proj, role_support, role_query, separator, selector, encoder, final_norm, decoder };
        Ok(Retriever { config, params: b.params, layout })
    }

    /// Rebuilds a model from stored parameter values, which must match the
    /// layout implied by `config` name for name.
    pub fn from_params(config: RetrieverConfig, params: &ParamSet) -> Result<Self> {
        let mut model = Retriever::new(config, 0)?;
        model.params.load_values(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &RetrieverConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the forward pass and returns the `n` support logits.
    ///
    /// `support` is `n x d_in` and `query` is `m x d_in`.
    pub fn encode_task(&self, tape: &mut Tape, support: &Tensor, query: &Tensor) -> Result<Var> {
        let cfg = &self.config;
        let (n, m) = (support.rows(), query.rows());
        if support.cols() != cfg.d_in || query.cols() != cfg.d_in {
            return Err(Error::shape(format!(
                "embeddings of width {}/{} for a retriever expecting {}",
                support.cols(),
                query.cols(),
                cfg.d_in
            )));
        }
        if n > cfg.max_support || m > cfg.max_query {
            return Err(Error::Capacity { needed: n + m + 1, capacity: cfg.capacity() });
        }
        let ps = &self.params;
        let l = &self.layout;

        let s_in = tape.constant(support.clone());
        let q_in = tape.constant(query.clone());
        let s = self.linear(tape, l.proj, s_in)?;
        let r_s = tape.param(ps, l.role_support);
        let s = tape.add_row(s, r_s)?;
        let q = self.linear(tape, l.proj, q_in)?;
        let r_q = tape.param(ps, l.role_query);
        let q = tape.add_row(q, r_q)?;
        let sep = tape.param(ps, l.separator);
        let mut x = tape.concat_rows(&[s, sep, q])?;

        for block in &l.encoder {
            x = self.block(tape, block, x, None)?;
        }
        let z = self.norm(tape, l.final_norm, x)?;

        let mut h = tape.param(ps, l.selector);
        for block in &l.decoder {
            h = self.block(tape, block, h, Some(z))?;
        }
        let z_support = tape.slice_rows(z, 0, n)?;
        let logits = tape.dot_rows(z_support, h)?;
        Ok(tape.scale(logits, 1.0 / math::sqrt(cfg.d_model as f64)))
    }

    /// Support logits without keeping the tape.
    pub fn logits(&self, support: &Tensor, query: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.encode_task(&mut tape, support, query)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// The policy's distribution over the support pool.
    pub fn probs(&self, support: &Tensor, query: &Tensor) -> Result<Vec<f64>> {
        softmax(&self.logits(support, query)?)
    }

    fn linear(&self, tape: &mut Tape, lin: Linear, x: Var) -> Result<Var> {
        let w = tape.param(&self.params, lin.w);
        let b = tape.param(&self.params, lin.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape, norm: Norm, x: Var) -> Result<Var> {
        let g = tape.param(&self.params, norm.g);
        let b = tape.param(&self.params, norm.b);
        tape.layer_norm(x, g, b, LN_EPS)
    }

    fn attention(&self, tape: &mut Tape, a: &Attention, x: Var, memory: Var) -> Result<Var> {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let q = self.linear(tape, a.q, x)?;
        let k = self.linear(tape, a.k, memory)?;
        let v = self.linear(tape, a.v, memory)?;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax(scores);
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        self.linear(tape, a.o, joined)
    }

    /// Pre-norm residual block. With `memory`, attention reads from it
    /// (cross-attention); otherwise it is self-attention.
    fn block(&self, tape: &mut Tape, b: &Block, x: Var, memory: Option<Var>) -> Result<Var> {
        let hx = self.norm(tape, b.ln1, x)?;
        let att = self.attention(tape, &b.attn, hx, memory.unwrap_or(hx))?;
        let x = tape.add(x, att)?;
        let hx = self.norm(tape, b.ln2, x)?;
        let f = self.linear(tape, b.ff1, hx)?;
        let f = tape.gelu(f);
        let f = self.linear(tape, b.ff2, f)?;
        tape.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_gradient;
    use alloc::vec;

    fn tiny() -> RetrieverConfig {
        RetrieverConfig {
            d_in: 8,
            d_model: 8,
            n_heads: 2,
            n_encoder: 1,
            n_decoder: 1,
            d_ff: 16,
            max_support: 16,
            max_query: 8,
            ..RetrieverConfig::default()
        }
    }

    fn random(rows: usize, cols: usize, r: &mut Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng::standard_normal(r)).collect()).unwrap()
    }

    /// Spreads every parameter away from its structured initialization.
    fn jitter(model: &mut Retriever, r: &mut Rng) {
        for p in model.params_mut().iter_mut() {
            for v in p.value.data_mut() {
                *v += 0.3 * rng::standard_normal(r);
            }
        }
    }

    #[test]
    fn parameter_count_is_a_function_of_config() {
        let a = Retriever::new(tiny(), 1).unwrap();
        let b = Retriever::new(tiny(), 2).unwrap();
        assert_eq!(a.params().num_scalars(), b.params().num_scalars());
        assert_ne!(a.params(), b.params());
        assert_eq!(a.params(), Retriever::new(tiny(), 1).unwrap().params());
    }

    #[test]
    fn single_item_pool_is_certain() {
        let mut r = rng::seeded(0);
        let model = Retriever::new(tiny(), 0).unwrap();
        let p = model.probs(&random(1, 8, &mut r), &random(3, 8, &mut r)).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn identical_support_items_get_identical_logits() {
        let mut r = rng::seeded(1);
        let mut model = Retriever::new(tiny(), 0).unwrap();
        jitter(&mut model, &mut r);
        let mut s = random(5, 8, &mut r);
        let row: Vec<f64> = s.row(1).to_vec();
        s.data_mut()[3 * 8..4 * 8].copy_from_slice(&row);
        let logits = model.logits(&s, &random(3, 8, &mut r)).unwrap();
        assert!((logits[1] - logits[3]).abs() < 1e-9);
    }

    #[test]
    fn permuting_support_permutes_logits() {
        let mut r = rng::seeded(2);
        let mut model = Retriever::new(tiny(), 0).unwrap();
        jitter(&mut model, &mut r);
        let s = random(6, 8, &mut r);
        let q = random(3, 8, &mut r);
        let perm = [4, 2, 0, 5, 1, 3];
        let mut data = Vec::new();
        for &p in &perm {
            data.extend_from_slice(s.row(p));
        }
        let sp = Tensor::matrix(6, 8, data).unwrap();
        let a = model.logits(&s, &q).unwrap();
        let b = model.logits(&sp, &q).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((b[i] - a[p]).abs() <= 1e-9);
        }
    }

    #[test]
    fn capacity_enforced() {
        let mut r = rng::seeded(3);
        let model = Retriever::new(tiny(), 0).unwrap();
        let err = model.logits(&random(17, 8, &mut r), &random(2, 8, &mut r)).unwrap_err();
        assert_eq!(err, Error::Capacity { needed: 20, capacity: 25 });
        assert!(matches!(model.logits(&random(2, 7, &mut r), &random(2, 7, &mut r)), Err(Error::Shape(_))));
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = RetrieverConfig { n_heads: 3, ..tiny() };
        assert!(Retriever::new(cfg, 0).is_err());
    }

    #[test]
    fn round_trips_through_param_set() {
        let mut r = rng::seeded(4);
        let mut model = Retriever::new(tiny(), 9).unwrap();
        jitter(&mut model, &mut r);
        let copy = Retriever::from_params(tiny(), model.params()).unwrap();
        let s = random(4, 8, &mut r);
        let q = random(2, 8, &mut r);
        assert_eq!(model.logits(&s, &q).unwrap(), copy.logits(&s, &q).unwrap());
    }

    #[test]
    fn gradient_of_log_prob_matches_finite_differences() {
        let mut r = rng::seeded(5);
        let cfg = RetrieverConfig { n_encoder: 2, ..tiny() };
        let mut model = Retriever::new(cfg, 3).unwrap();
        jitter(&mut model, &mut r);
        let s = random(6, 8, &mut r);
        let q = random(3, 8, &mut r);
        let target = 2;

        let loss = |m: &Retriever, tape: &mut Tape| -> Result<Var> {
            let logits = m.encode_task(tape, &s, &q)?;
            let p = tape.softmax(logits);
            let pick = tape.gather(p, &[target])?;
            let lp = tape.log(pick);
            let l = tape.sum(lp);
            Ok(tape.scale(l, -1.0))
        };
        let mut tape = Tape::new();
        let l = loss(&model, &mut tape).unwrap();
        let mut params = model.params().clone();
        tape.backward(l, &mut params).unwrap();
        let numeric = finite_difference_gradient(
            |ps| {
                let m = Retriever::from_params(cfg, ps)?;
                let mut t = Tape::new();
                let l = loss(&m, &mut t)?;
                Ok(t.value(l).item())
            },
            model.params(),
            1e-5,
        )
        .unwrap();
        for (p, num) in params.iter().zip(&numeric) {
            for (a, n) in p.grad.data().iter().zip(num.data()) {
                let tol = 1e-3 * a.abs().max(n.abs());
                assert!((a - n).abs() <= tol.max(1e-8), "{}: {a} vs {n}", p.name);
            }
        }
    }
}
