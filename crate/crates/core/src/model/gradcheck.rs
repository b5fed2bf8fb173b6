use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, ParamStore, Tape, Tensor, Var};
use crate::sampling::derive_rng;

use super::{ModelConfig, Network, Result};

/// Largest relative error found in one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Full quantized loss (reconstruction through the straight-through
    /// estimator plus commitment), every parameter tensor.
    pub full: Vec<GroupError>,
    /// Reconstruction loss with quantization disabled.
    pub warmup: Vec<GroupError>,
    /// Commitment term alone, encoder-side tensors.
    pub commitment: Vec<GroupError>,
    /// Largest absolute analytic gradient that reached the codebook.
    pub codebook_grad_max_abs: f64,
    /// Change of the loss value after perturbing one codebook entry.
    pub codebook_forward_change: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Full,
    Warmup,
    Commitment,
}

struct Fixture {
    net: Network,
    ids: Vec<u32>,
    codebook: Tensor<f64>,
    /// Frozen soft-EM samples, `m` per head.
    codes: Vec<usize>,
    m: usize,
    heads: usize,
    dim: usize,
}

impl Fixture {
    /// Loss with analytic graph. Returns the loss node and the codebook leaf.
    fn analytic<'p>(&self, tape: &mut Tape<'p, f64>, mode: Mode) -> (Var, Var) {
        let heads = self.net.encode_heads(tape, &self.ids, None);
        let cb = tape.constant(self.codebook.clone());
        let picked = tape.gather(cb, &self.codes);
        let q = tape.group_mean(picked, self.m);
        let loss = match mode {
            Mode::Warmup => self.net.reconstruction_loss(tape, heads, &self.ids, None),
            Mode::Commitment => tape.row_distance(heads, q),
            Mode::Full => {
                let memory = tape.straight_through(heads, q);
                let rec = self.net.reconstruction_loss(tape, memory, &self.ids, None);
                let com = tape.row_distance(heads, q);
                tape.weighted_sum(&[(rec, 1.0), (com, 1.0)])
            }
        };
        (loss, cb)
    }

    fn quantized(&self, codebook: &Tensor<f64>) -> Tensor<f64> {
        let mut q = Tensor::zeros(self.heads, self.dim);
        for h in 0..self.heads {
            for &c in &self.codes[h * self.m..(h + 1) * self.m] {
                for (o, &v) in q.row_mut(h).iter_mut().zip(codebook.row(c)) {
                    *o += v / self.m as f64;
                }
            }
        }
        q
    }

    /// Loss value for finite differences. The straight-through path is
    /// evaluated as `x + c` with `c = q − x` frozen at the base point, which
    /// is the function whose derivative the estimator reports.
    fn numeric(&self, store: &ParamStore<f64>, mode: Mode, offset: Option<&Tensor<f64>>, codebook: &Tensor<f64>) -> f64 {
        let mut tape = Tape::new(store);
        let heads = self.net.encode_heads(&mut tape, &self.ids, None);
        let q = tape.constant(self.quantized(codebook));
        let loss = match mode {
            Mode::Warmup => self.net.reconstruction_loss(&mut tape, heads, &self.ids, None),
            Mode::Commitment => tape.row_distance(heads, q),
            Mode::Full => {
                let c = tape.constant(offset.expect("offset for full mode").clone());
                let memory = tape.add(heads, c);
                let rec = self.net.reconstruction_loss(&mut tape, memory, &self.ids, None);
                let com = tape.row_distance(heads, q);
                tape.weighted_sum(&[(rec, 1.0), (com, 1.0)])
            }
        };
        tape.scalar(loss)
    }

    fn offset(&self, store: &ParamStore<f64>) -> Tensor<f64> {
        let mut tape = Tape::new(store);
        let heads = self.net.encode_heads(&mut tape, &self.ids, None);
        let x = tape.tensor(heads);
        let mut q = self.quantized(&self.codebook);
        for (o, &v) in q.data_mut().iter_mut().zip(x.data()) {
            *o -= v;
        }
        q
    }
}

/// Compares analytic gradients of the training loss with central finite
/// differences in 64-bit precision, on a fixed random sentence and frozen
/// code samples.
pub fn gradient_check(config: &ModelConfig, eps: f64, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = derive_rng(seed, "gradcheck");
    let mut store = ParamStore::<f64>::new();
    let net = Network::init(config, &mut store, &mut rng);
    let (h, d, k, m) = (config.sentence_heads, config.dim, config.codebook_size, config.soft_samples);
    let len = 5.min(config.max_sentence_len);
    let specials = crate::corpus::NUM_SPECIALS as u32;
    let ids: Vec<u32> = (0..len)
        .map(|_| rng.gen_range(specials..config.vocab_size as u32))
        .collect();
    let codebook = Tensor::from_vec(k, d, (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let codes: Vec<usize> = (0..h * m).map(|_| rng.gen_range(0..k)).collect();
    let fx = Fixture {
        net,
        ids,
        codebook,
        codes,
        m,
        heads: h,
        dim: d,
    };

    let mut report = GradCheckReport {
        full: Vec::new(),
        warmup: Vec::new(),
        commitment: Vec::new(),
        codebook_grad_max_abs: 0.0,
        codebook_forward_change: 0.0,
        max_rel_error: 0.0,
    };

    for mode in [Mode::Full, Mode::Warmup, Mode::Commitment] {
        let mut grads = ParamGrads::zeros_like(&store);
        let (loss_value, cb_grad_max) = {
            let mut tape = Tape::new(&store);
            let (loss, cb) = fx.analytic(&mut tape, mode);
            let g = tape.backward(loss);
            g.accumulate_params(&tape, &mut grads);
            let cb_max = g
                .get(cb)
                .map(|v| v.iter().fold(0.0f64, |a, &x| a.max(x.abs())))
                .unwrap_or(0.0);
            (tape.scalar(loss), cb_max)
        };
        report.codebook_grad_max_abs = report.codebook_grad_max_abs.max(cb_grad_max);
        let offset = (mode == Mode::Full).then(|| fx.offset(&store));
        let base = fx.numeric(&store, mode, offset.as_ref(), &fx.codebook);
        debug_assert!((base - loss_value).abs() < 1e-9);

        let ids: Vec<_> = store.iter().map(|(id, name, _)| (id, name.to_string())).collect();
        let mut groups = Vec::new();
        for (id, name) in ids {
            // the commitment term only reaches the encoder side
            if mode == Mode::Commitment && !is_encoder_side(&name) {
                continue;
            }
            let analytic = grads.get(id).to_vec();
            let mut worst = 0.0f64;
            for (j, &a) in analytic.iter().enumerate() {
                let orig = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = orig + eps;
                let plus = fx.numeric(&store, mode, offset.as_ref(), &fx.codebook);
                store.get_mut(id).data_mut()[j] = orig - eps;
                let minus = fx.numeric(&store, mode, offset.as_ref(), &fx.codebook);
                store.get_mut(id).data_mut()[j] = orig;
                let f = (plus - minus) / (2.0 * eps);
                worst = worst.max(relative_error(a, f));
            }
            report.max_rel_error = report.max_rel_error.max(worst);
            groups.push(GroupError {
                name,
                checked: analytic.len(),
                max_rel_error: worst,
            });
        }
        match mode {
            Mode::Full => report.full = groups,
            Mode::Warmup => report.warmup = groups,
            Mode::Commitment => report.commitment = groups,
        }
    }

    let offset = fx.offset(&store);
    let base = fx.numeric(&store, Mode::Full, Some(&offset), &fx.codebook);
    let mut moved = fx.codebook.clone();
    moved.row_mut(fx.codes[0])[0] += 0.1;
    report.codebook_forward_change = (fx.numeric(&store, Mode::Full, Some(&offset), &moved) - base).abs();
    Ok(report)
}

fn is_encoder_side(name: &str) -> bool {
    name == "embed" || name.starts_with("encoder.") || name.starts_with("heads.")
}

/// `|a − f| / max(|a|, |f|)`, with values below `1e-7` in both treated as
/// agreeing up to their absolute difference.
fn relative_error(a: f64, f: f64) -> f64 {
    let scale = a.abs().max(f.abs());
    if scale < 1e-7 {
        return (a - f).abs();
    }
    (a - f).abs() / scale
}
