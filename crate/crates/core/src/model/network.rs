use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::corpus::{BOS, EOS, SNT};
use crate::sampling::SeededRng;

use super::ModelConfig;

/// Inverted dropout applied during training.
pub struct Dropout<'a> {
    pub rng: &'a mut SeededRng,
    pub p: f64,
}

impl Dropout<'_> {
    fn apply<T: Real>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        if self.p <= 0.0 {
            return x;
        }
        let (r, c) = tape.shape(x);
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask = (0..r * c)
            .map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        tape.mask(x, mask)
    }
}

fn drop<T: Real>(tape: &mut Tape<'_, T>, x: Var, dropout: &mut Option<&mut Dropout<'_>>) -> Var {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross_attn: Attention,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

/// Parameter layout of the autoencoder. Holds ids into a [`ParamStore`], so
/// the same layout drives `f32` training and `f64` gradient checks.
#[derive(Clone, Debug)]
pub struct Network {
    dim: usize,
    sentence_heads: usize,
    attn_heads: usize,
    positional: bool,
    /// Shared by encoder and decoder inputs.
    embed: ParamId,
    encoder: Vec<EncoderLayer>,
    head_proj: Linear,
    head_norm: Norm,
    decoder: Vec<DecoderLayer>,
    output: Linear,
}

struct Builder<'s, 'r, T: Real> {
    store: &'s mut ParamStore<T>,
    rng: Option<&'r mut SeededRng>,
}

impl<T: Real> Builder<'_, '_, T> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let t = match (&mut self.rng, init) {
            (_, Init::Ones) => Tensor::filled(rows, cols, T::one()),
            (_, Init::Zeros) => Tensor::zeros(rows, cols),
            (Some(rng), Init::Xavier) => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| T::lit(rng.gen_range(-a..a))).collect();
                Tensor::from_vec(rows, cols, data)
            }
            (Some(rng), Init::Normal(std)) => {
                let normal = rand_distr::Normal::new(0.0, std).expect("valid std");
                let data = (0..rows * cols)
                    .map(|_| T::lit(rand_distr::Distribution::sample(&normal, *rng)))
                    .collect();
                Tensor::from_vec(rows, cols, data)
            }
            (None, _) => Tensor::zeros(rows, cols),
        };
        self.store.add(name, t)
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.weight"), inp, out, Init::Xavier),
            b: self.tensor(format!("{name}.bias"), 1, out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.tensor(format!("{name}.gain"), 1, d, Init::Ones),
            b: self.tensor(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, f: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Normal(f64),
    Ones,
    Zeros,
}

impl Network {
    /// Registers freshly initialized parameters in `store`.
    pub fn init<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut SeededRng) -> Self {
        Self::build(cfg, &mut Builder { store, rng: Some(rng) })
    }

    fn build<T: Real>(cfg: &ModelConfig, b: &mut Builder<'_, '_, T>) -> Self {
        let (d, f, v) = (cfg.dim, cfg.ff_dim, cfg.vocab_size);
        let embed = b.tensor("embed".into(), v, d, Init::Normal(1.0));
        let encoder = (0..cfg.layers)
            .map(|l| EncoderLayer {
                attn: b.attention(&format!("encoder.{l}.attn"), d),
                norm1: b.norm(&format!("encoder.{l}.norm1"), d),
                ff: b.ff(&format!("encoder.{l}.ff"), d, f),
                norm2: b.norm(&format!("encoder.{l}.norm2"), d),
            })
            .collect();
        let head_proj = b.linear("heads.proj", cfg.head_dim(), d);
        let head_norm = b.norm("heads.norm", d);
        let decoder = (0..cfg.layers)
            .map(|l| DecoderLayer {
                self_attn: b.attention(&format!("decoder.{l}.self_attn"), d),
                norm1: b.norm(&format!("decoder.{l}.norm1"), d),
                cross_attn: b.attention(&format!("decoder.{l}.cross_attn"), d),
                norm2: b.norm(&format!("decoder.{l}.norm2"), d),
                ff: b.ff(&format!("decoder.{l}.ff"), d, f),
                norm3: b.norm(&format!("decoder.{l}.norm3"), d),
            })
            .collect();
        let output = b.linear("output", d, v);
        Self {
            dim: d,
            sentence_heads: cfg.sentence_heads,
            attn_heads: cfg.attn_heads,
            positional: cfg.use_positional_encodings,
            embed,
            encoder,
            head_proj,
            head_norm,
            decoder,
            output,
        }
    }

    /// Layout for parameters that already exist in `store` (e.g. loaded from
    /// a checkpoint). Fails if any name or shape disagrees with `cfg`.
    pub fn resolve<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Self, String> {
        let mut expected = ParamStore::<T>::new();
        let net = Self::build(cfg, &mut Builder { store: &mut expected, rng: None });
        if expected.len() != store.len() {
            return Err(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                store.len()
            ));
        }
        for (id, name, t) in expected.iter() {
            let found = store.id(name).ok_or_else(|| format!("missing parameter {name}"))?;
            if found != id {
                return Err(format!("parameter {name} out of order"));
            }
            if store.get(found).shape() != t.shape() {
                return Err(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    store.get(found).shape(),
                    t.shape()
                ));
            }
        }
        Ok(net)
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    fn linear<T: Real>(&self, t: &mut Tape<'_, T>, x: Var, l: &Linear) -> Var {
        let w = t.param(l.w);
        let b = t.param(l.b);
        t.linear(x, w, b)
    }

    fn norm<T: Real>(&self, t: &mut Tape<'_, T>, x: Var, n: &Norm) -> Var {
        let g = t.param(n.g);
        let b = t.param(n.b);
        t.layer_norm(x, g, b)
    }

    fn attend<T: Real>(&self, t: &mut Tape<'_, T>, query: Var, memory: Var, a: &Attention, causal: bool) -> Var {
        let q = self.linear(t, query, &a.q);
        let k = self.linear(t, memory, &a.k);
        let v = self.linear(t, memory, &a.v);
        let ctx = t.attention(q, k, v, self.attn_heads, causal);
        self.linear(t, ctx, &a.o)
    }

    fn feed_forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var, ff: &FeedForward) -> Var {
        let h = self.linear(t, x, &ff.up);
        let h = t.relu(h);
        self.linear(t, h, &ff.down)
    }

    fn embed_tokens<T: Real>(&self, t: &mut Tape<'_, T>, ids: &[usize], dropout: &mut Option<&mut Dropout<'_>>) -> Var {
        let table = t.param(self.embed);
        let mut x = t.gather(table, ids);
        if self.positional {
            let pe = t.constant(positional_encoding(ids.len(), self.dim));
            x = t.add(x, pe);
        }
        drop(t, x, dropout)
    }

    /// `H × D` head vectors for one sentence (without `<snt>`; it is
    /// prepended here).
    pub fn encode_heads<T: Real>(&self, t: &mut Tape<'_, T>, ids: &[u32], mut dropout: Option<&mut Dropout<'_>>) -> Var {
        let tokens: Vec<usize> = std::iter::once(SNT).chain(ids.iter().copied()).map(|i| i as usize).collect();
        let mut x = self.embed_tokens(t, &tokens, &mut dropout);
        for layer in &self.encoder {
            let a = self.attend(t, x, x, &layer.attn, false);
            let a = drop(t, a, &mut dropout);
            let r = t.add(x, a);
            x = self.norm(t, r, &layer.norm1);
            let f = self.feed_forward(t, x, &layer.ff);
            let f = drop(t, f, &mut dropout);
            let r = t.add(x, f);
            x = self.norm(t, r, &layer.norm2);
        }
        let snt = t.rows(x, 0, 1);
        let parts = t.reshape(snt, self.sentence_heads, self.dim / self.sentence_heads);
        let proj = self.linear(t, parts, &self.head_proj);
        self.norm(t, proj, &self.head_norm)
    }

    /// Negative log-likelihood (summed over tokens) of reconstructing `ids` (framed `<s> … </s>`)
    /// while attending over `memory` (`H × D`).
    pub fn reconstruction_loss<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        memory: Var,
        ids: &[u32],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Var {
        let inputs: Vec<usize> = std::iter::once(BOS).chain(ids.iter().copied()).map(|i| i as usize).collect();
        let targets: Vec<usize> = ids.iter().copied().chain(std::iter::once(EOS)).map(|i| i as usize).collect();
        let mut y = self.embed_tokens(t, &inputs, &mut dropout);
        for layer in &self.decoder {
            let a = self.attend(t, y, y, &layer.self_attn, true);
            let a = drop(t, a, &mut dropout);
            let r = t.add(y, a);
            y = self.norm(t, r, &layer.norm1);
            let c = self.attend(t, y, memory, &layer.cross_attn, false);
            let c = drop(t, c, &mut dropout);
            let r = t.add(y, c);
            y = self.norm(t, r, &layer.norm2);
            let f = self.feed_forward(t, y, &layer.ff);
            let f = drop(t, f, &mut dropout);
            let r = t.add(y, f);
            y = self.norm(t, r, &layer.norm3);
        }
        let logits = self.linear(t, y, &self.output);
        let mean = t.cross_entropy(logits, &targets);
        t.scale(mean, T::from_usize(targets.len()).unwrap())
    }
}

/// Sinusoidal position table (`len × dim`).
fn positional_encoding<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut pe = Tensor::zeros(len, dim);
    for pos in 0..len {
        let row = pe.row_mut(pos);
        for i in 0..dim {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            row[i] = T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;

    fn cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            ff_dim: 16,
            layers: 1,
            attn_heads: 2,
            sentence_heads: 2,
            vocab_size: 20,
            codebook_size: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn resolve_recovers_layout() {
        let mut store = ParamStore::<f32>::new();
        let net = Network::init(&cfg(), &mut store, &mut rng_from_seed(1));
        let again = Network::resolve(&cfg(), &store).unwrap();
        assert_eq!(format!("{net:?}"), format!("{again:?}"));
        let wrong = ModelConfig { ff_dim: 12, ..cfg() };
        assert!(Network::resolve(&wrong, &store).is_err());
    }

    #[test]
    fn shared_embedding_feeds_both_paths() {
        let mut store = ParamStore::<f64>::new();
        let net = Network::init(&cfg(), &mut store, &mut rng_from_seed(2));
        let ids = [7u32, 9, 11];
        let run = |store: &ParamStore<f64>| {
            let mut t = Tape::new(store);
            let h = net.encode_heads(&mut t, &ids, None);
            let enc = t.value(h).to_vec();
            let mem = t.constant(Tensor::zeros(2, 8));
            let l = net.reconstruction_loss(&mut t, mem, &ids, None);
            (enc, t.scalar(l))
        };
        let (enc0, loss0) = run(&store);
        // token 9 appears in both encoder input and decoder input
        let row = &mut store.get_mut(net.embedding()).row_mut(9)[..];
        row[0] += 0.5;
        let (enc1, loss1) = run(&store);
        assert_ne!(enc0, enc1);
        assert_ne!(loss0, loss1);
    }

    #[test]
    fn positional_table_starts_with_sin_cos() {
        let pe: Tensor<f64> = positional_encoding(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-12);
    }
}
