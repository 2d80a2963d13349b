//! Fully connected ReLU value regressor trained by SGD on squared error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{AgentCentricState, INPUT_DIM};

pub const DEFAULT_WIDTHS: [usize; 5] = [INPUT_DIM, 150, 100, 100, 1];

pub const WEIGHTS_MAGIC: &[u8; 9] = b"CADRLNET1";
const MAGIC_STEM: &[u8; 8] = b"CADRLNET";

// Rows per gradient shard. Fixed so the reduction order does not depend on
// the thread count.
const GRAD_CHUNK: usize = 64;

/// One affine layer; `weights` is `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueNetwork {
    layers: Vec<Layer>,
}

/// A network input with its regression target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: AgentCentricState,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Window (iterations) over which a lack of improvement halves the rate.
    pub decay_window: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 500,
            iterations: 10_000,
            init_scale: 1.0,
            seed: 0,
            decay_window: 200,
        }
    }
}

/// Parameter gradients, laid out like the network.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(net: &ValueNetwork) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Shape(format!("need at least two widths, got {widths:?}")));
    }
    if widths[0] != INPUT_DIM || *widths.last().unwrap() != 1 {
        return Err(Error::Shape(format!(
            "widths must start at {INPUT_DIM} and end at 1, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {widths:?}")));
    }
    Ok(())
}

impl ValueNetwork {
    /// Uniform weights in `±init_scale / sqrt(fan_in)`, zero biases.
    pub fn init(widths: &[usize], init_scale: f64, seed: u64) -> Result<Self> {
        check_widths(widths)?;
        if !(init_scale >= 0.0) || !init_scale.is_finite() {
            return Err(Error::invalid(format!("init scale must be >= 0, got {init_scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = init_scale / (fan_in as f64).sqrt();
                let weights = if bound > 0.0 {
                    let dist = Uniform::new_inclusive(-bound, bound);
                    Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(&mut rng))
                } else {
                    Array2::zeros((fan_out, fan_in))
                };
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != rows {}",
                    l.bias.len(),
                    l.outputs()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        let net = Self { layers };
        check_widths(&net.widths())?;
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(Layer::outputs));
        w
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &AgentCentricState) -> f64 {
        let input = ArrayView2::from_shape((1, INPUT_DIM), x.as_slice()).expect("input shape");
        self.forward_batch(input)[0]
    }

    /// Evaluates a batch of inputs laid out as `(n, 15)`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array1<f64> {
        let last = self.layers.len() - 1;
        let mut act: Array2<f64> = inputs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            act = z;
        }
        act.column(0).to_owned()
    }

    pub fn forward_rows(&self, rows: &[AgentCentricState]) -> Array1<f64> {
        let x = stack_inputs(rows);
        self.forward_batch(x.view())
    }

    /// Mean squared error and its gradient over `batch`.
    pub fn gradients(&self, batch: &[TrainingPair]) -> (f64, Gradients) {
        let n = batch.len() as f64;
        let shards: Vec<(f64, Gradients)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| self.chunk_gradients(chunk, n))
            .collect();
        let mut total = Gradients::zeros_like(self);
        let mut sse = 0.0;
        for (loss, g) in &shards {
            sse += loss;
            total.add_assign(g);
        }
        (sse / n, total)
    }

    // Sum of squared errors on `chunk` and the gradient of (sum / n).
    fn chunk_gradients(&self, chunk: &[TrainingPair], n: f64) -> (f64, Gradients) {
        let inputs: Vec<AgentCentricState> = chunk.iter().map(|p| p.input).collect();
        let x = stack_inputs(&inputs);
        let last = self.layers.len() - 1;

        // Forward, keeping pre-activations.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights.t());
            z += &layer.bias;
            let a = if i < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }

        let out = acts[last + 1].column(0);
        let mut delta = Array2::zeros((chunk.len(), 1));
        let mut sse = 0.0;
        for (k, pair) in chunk.iter().enumerate() {
            let err = out[k] - pair.target;
            sse += err * err;
            delta[[k, 0]] = 2.0 * err / n;
        }

        let mut grads = Gradients::zeros_like(self);
        for i in (0..self.layers.len()).rev() {
            grads.weights[i] = delta.t().dot(&acts[i]);
            grads.bias[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights);
                Zip::from(&mut prev).and(&pre[i - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        (sse, grads)
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.weights.scaled_add(-lr, &grads.weights[i]);
            layer.bias.scaled_add(-lr, &grads.bias[i]);
        }
    }

    /// One SGD step on mean squared error. Returns the loss before the step.
    pub fn backprop_batch(&mut self, batch: &[TrainingPair], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let (loss, grads) = self.gradients(batch);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: 0,
                reason: format!("loss is {loss}"),
            });
        }
        self.apply_gradients(&grads, lr);
        Ok(loss)
    }

    pub fn mse(&self, pairs: &[TrainingPair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let inputs: Vec<AgentCentricState> = pairs.iter().map(|p| p.input).collect();
        let out = self.forward_rows(&inputs);
        pairs
            .iter()
            .zip(out.iter())
            .map(|(p, v)| (p.target - v).powi(2))
            .sum::<f64>()
            / pairs.len() as f64
    }

    /// Writes the binary weight file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for l in &self.layers {
            w.write_u32::<LittleEndian>(l.outputs() as u32)?;
            w.write_u32::<LittleEndian>(l.inputs() as u32)?;
            for v in l.weights.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
            for v in l.bias.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the weight file and its JSON sidecar.
    pub fn save_with_meta(&self, path: &Path, meta: &WeightsMeta) -> Result<()> {
        if meta.widths != self.widths() {
            return Err(Error::Shape(format!(
                "metadata widths {:?} != network widths {:?}",
                meta.widths,
                self.widths()
            )));
        }
        self.save(path)?;
        let f = BufWriter::new(File::create(sidecar_path(path))?);
        serde_json::to_writer_pretty(f, meta)?;
        Ok(())
    }

    /// Reads a binary weight file. When a sidecar exists its declared widths
    /// must match the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let net = Self::decode(&bytes)?;
        let side = sidecar_path(path);
        if side.exists() {
            let meta: WeightsMeta = serde_json::from_reader(BufReader::new(File::open(&side)?))?;
            if meta.widths != net.widths() {
                return Err(Error::Shape(format!(
                    "sidecar declares widths {:?} but weights have {:?}",
                    meta.widths,
                    net.widths()
                )));
            }
        }
        Ok(net)
    }

    /// Loads and checks the layer widths against `expected`.
    pub fn load_expecting(path: &Path, expected: &[usize]) -> Result<Self> {
        let net = Self::load(path)?;
        if net.widths() != expected {
            return Err(Error::Shape(format!(
                "expected widths {expected:?}, file has {:?}",
                net.widths()
            )));
        }
        Ok(net)
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < WEIGHTS_MAGIC.len() || &bytes[..MAGIC_STEM.len()] != MAGIC_STEM {
            return Err(Error::Format("missing CADRLNET magic".into()));
        }
        if &bytes[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
            return Err(Error::Version {
                found: String::from_utf8_lossy(&bytes[..WEIGHTS_MAGIC.len()]).into_owned(),
                expected: String::from_utf8_lossy(WEIGHTS_MAGIC).into_owned(),
            });
        }
        let mut cur = &bytes[WEIGHTS_MAGIC.len()..];
        let truncated = |what: &str| Error::Shape(format!("file truncated while reading {what}"));
        let n_layers = cur.read_u32::<LittleEndian>().map_err(|_| truncated("layer count"))? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Shape(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let rows = cur.read_u32::<LittleEndian>().map_err(|_| truncated("layer shape"))? as usize;
            let cols = cur.read_u32::<LittleEndian>().map_err(|_| truncated("layer shape"))? as usize;
            let need = (rows * cols + rows) * 8;
            if cur.len() < need {
                return Err(Error::Shape(format!(
                    "layer {i} declares {rows}x{cols} but only {} bytes remain",
                    cur.len()
                )));
            }
            let mut w = vec![0.0; rows * cols];
            cur.read_f64_into::<LittleEndian>(&mut w).map_err(|_| truncated("weights"))?;
            let mut b = vec![0.0; rows];
            cur.read_f64_into::<LittleEndian>(&mut b).map_err(|_| truncated("biases"))?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((rows, cols), w)
                    .map_err(|e| Error::Shape(e.to_string()))?,
                bias: Array1::from_vec(b),
            });
        }
        if !cur.is_empty() {
            return Err(Error::Shape(format!("{} trailing bytes after last layer", cur.len())));
        }
        Self::from_layers(layers)
    }
}

/// Sidecar metadata stored next to a weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub gamma: f64,
    pub widths: Vec<usize>,
    pub provenance: serde_json::Value,
}

/// `weights.bin` -> `weights.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

pub fn stack_inputs(rows: &[AgentCentricState]) -> Array2<f64> {
    let mut x = Array2::zeros((rows.len(), INPUT_DIM));
    for (i, r) in rows.iter().enumerate() {
        x.slice_mut(s![i, ..]).assign(&ndarray::ArrayView1::from(&r.0[..]));
    }
    x
}

/// Halves the learning rate whenever the best loss has not improved over a
/// full window of iterations.
#[derive(Clone, Debug)]
pub struct StagnationDecay {
    lr: f64,
    floor: f64,
    window: usize,
    best: f64,
    window_best: f64,
    seen: usize,
}

impl StagnationDecay {
    pub fn new(lr: f64, window: usize) -> Self {
        Self {
            lr,
            floor: 0.0,
            window: window.max(1),
            best: f64::INFINITY,
            window_best: f64::INFINITY,
            seen: 0,
        }
    }

    /// Never decays below `floor`.
    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, loss: f64) {
        self.window_best = self.window_best.min(loss);
        self.seen += 1;
        if self.seen == self.window {
            if self.window_best >= self.best {
                self.lr = (self.lr * 0.5).max(self.floor);
            }
            self.best = self.best.min(self.window_best);
            self.window_best = f64::INFINITY;
            self.seen = 0;
        }
    }
}
