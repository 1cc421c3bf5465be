//! Vanilla LSTM cells and the densely connected stack.
//!
//! Layer `k` of a dense stack reads `[x_t, h_1, ..., h_k]` (the input
//! embedding followed by every earlier layer's output) and the stack emits
//! `h_t = [x_t, h_1, ..., h_L]`. Because every layer sees the raw input, any
//! layer can be removed without starving the ones above it.
//!
//! Gate blocks inside the fused weight matrix are ordered `(i, f, g, o)`.
//! Weights are stored as `(input_dim + hidden_dim) x 4*hidden_dim` and
//! applied as `[x, h_prev] · W + b`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, ParamId, ParamSet};
use crate::tensor::Tensor;

pub const GATE_ORDER: &str = "i,f,g,o";

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    w: Var,
    b: Var,
    pub hidden: usize,
    pub input: usize,
}

impl LstmLayer {
    /// Glorot-uniform weights, zero bias except a forget-gate bias of 1.
    pub fn new(
        set: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = glorot(input_dim + hidden_dim, 4 * hidden_dim, rng);
        let mut b = Tensor::zeros(1, 4 * hidden_dim);
        for j in hidden_dim..2 * hidden_dim {
            b.set(0, j, 1.0);
        }
        LstmLayer {
            input_dim,
            hidden_dim,
            w: set.add(format!("{name}.w"), w),
            b: set.add(format!("{name}.b"), b),
        }
    }

    /// Register already-shaped tensors (used by loaders and constructions).
    pub fn from_tensors(set: &mut ParamSet, name: &str, w: Tensor, b: Tensor) -> Result<Self> {
        if !w.cols().is_multiple_of(4) || b.shape() != (1, w.cols()) || w.rows() < w.cols() / 4 {
            return Err(Error::dim(
                "lstm",
                format!("weights {:?}, bias {:?}", w.shape(), b.shape()),
            ));
        }
        let hidden_dim = w.cols() / 4;
        Ok(LstmLayer {
            input_dim: w.rows() - hidden_dim,
            hidden_dim,
            w: set.add(format!("{name}.w"), w),
            b: set.add(format!("{name}.b"), b),
        })
    }

    pub fn bind(&self, g: &mut Graph, set: &ParamSet) -> BoundLstm {
        BoundLstm {
            w: set.bind(g, self.w),
            b: set.bind(g, self.b),
            hidden: self.hidden_dim,
            input: self.input_dim,
        }
    }
}

/// One LSTM update. `x` is `B x input_dim`, `h` and `c` are `B x hidden_dim`.
pub fn lstm_step(g: &mut Graph, cell: &BoundLstm, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let xv = g.value(x);
    if xv.cols() != cell.input {
        return Err(Error::dim(
            "lstm_step",
            format!("input width {} but layer expects {}", xv.cols(), cell.input),
        ));
    }
    let hd = cell.hidden;
    let xh = g.concat(&[x, h])?;
    let pre = g.matmul(xh, cell.w)?;
    let pre = g.add_row(pre, cell.b)?;
    let i = g.slice(pre, 0, hd)?;
    let f = g.slice(pre, hd, hd)?;
    let gg = g.slice(pre, 2 * hd, hd)?;
    let o = g.slice(pre, 3 * hd, hd)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let gg = g.tanh(gg);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c_new = g.add(fc, ig)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Relaxed layer-selection gates, one per recurrent layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMask {
    pub z: Vec<f64>,
}

impl LayerMask {
    pub fn ones(layers: usize) -> Self {
        LayerMask { z: vec![1.0; layers] }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        LayerMask {
            z: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Clamp every component into `[0, 1]`.
    pub fn project(&mut self) {
        for v in &mut self.z {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Number of strictly positive components.
    pub fn l0(&self) -> usize {
        self.z.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.z.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `max_i min(z_i, 1 - z_i)`: zero exactly when binary.
    pub fn distance_from_binary(&self) -> f64 {
        self.z.iter().map(|&v| v.min(1.0 - v)).fold(0.0, f64::max)
    }

    pub fn rounded(&self, threshold: f64) -> LayerMask {
        LayerMask {
            z: self
                .z
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::row(&self.z)
    }

    pub fn is_all_ones(&self) -> bool {
        self.z.iter().all(|&v| v == 1.0)
    }
}

/// Recurrent state carried between windows: `(h, c)` per layer.
#[derive(Clone, Debug)]
pub struct StackState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl StackState {
    pub fn zeros(stack: &DenseStack, batch: usize) -> Self {
        StackState {
            layers: stack
                .layers
                .iter()
                .map(|l| {
                    (
                        Tensor::zeros(batch, l.hidden_dim),
                        Tensor::zeros(batch, l.hidden_dim),
                    )
                })
                .collect(),
        }
    }
}

/// A densely connected stack of LSTM layers sharing one hidden width.
#[derive(Clone, Debug)]
pub struct DenseStack {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: Vec<LstmLayer>,
    /// Original depth index of every layer; survives physical deletion.
    pub layer_ids: Vec<usize>,
}

/// How the stack is run for one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct StackMode<'a> {
    /// `1 x L` gate vector scaling every layer's output; `None` means all ones.
    pub gates: Option<Var>,
    /// Layer-wise dropout: `false` hides a layer from the layers above it
    /// (its output still reaches `h_t`).
    pub keep: Option<&'a [bool]>,
}

pub struct StackOutput {
    /// `h_t` for every step, `B x output_dim`.
    pub outputs: Vec<Var>,
    /// Gated output of every layer at every step, `[t][layer]`.
    pub layer_outputs: Vec<Vec<Var>>,
    pub state: StackState,
}

impl DenseStack {
    pub fn new(
        set: &mut ParamSet,
        prefix: &str,
        embed_dim: usize,
        hidden_dim: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers_vec = (0..layers)
            .map(|k| {
                LstmLayer::new(
                    set,
                    &format!("{prefix}.layer{k}"),
                    embed_dim + k * hidden_dim,
                    hidden_dim,
                    rng,
                )
            })
            .collect();
        DenseStack {
            embed_dim,
            hidden_dim,
            layers: layers_vec,
            layer_ids: (0..layers).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.embed_dim + self.layers.len() * self.hidden_dim
    }

    /// Check the dense width invariant for every layer.
    pub fn validate(&self) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            let want = self.embed_dim + k * self.hidden_dim;
            if l.input_dim != want || l.hidden_dim != self.hidden_dim {
                return Err(Error::dim(
                    "dense_stack",
                    format!(
                        "layer {k} is {}->{} but dense input width is {want}->{}",
                        l.input_dim, l.hidden_dim, self.hidden_dim
                    ),
                ));
            }
        }
        if self.layer_ids.len() != self.layers.len() {
            return Err(Error::Contract("layer manifest length mismatch".into()));
        }
        Ok(())
    }

    /// Run the stack over `inputs` (each `B x embed_dim`), starting from `state`.
    pub fn forward(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        inputs: &[Var],
        state: &StackState,
        mode: StackMode<'_>,
    ) -> Result<StackOutput> {
        let n = self.layers.len();
        if let Some(z) = mode.gates {
            let zc = g.value(z).cols();
            if zc != n {
                return Err(Error::dim("dense_forward", format!("{zc} gates for {n} layers")));
            }
        }
        if let Some(keep) = mode.keep {
            if keep.len() != n {
                return Err(Error::dim(
                    "dense_forward",
                    format!("{} dropout flags for {n} layers", keep.len()),
                ));
            }
        }
        if state.layers.len() != n {
            return Err(Error::dim("dense_forward", "state does not match stack depth"));
        }
        let cells: Vec<BoundLstm> = self.layers.iter().map(|l| l.bind(g, set)).collect();
        let mut hs: Vec<Var> = state.layers.iter().map(|(h, _)| g.constant(h.clone())).collect();
        let mut cs: Vec<Var> = state.layers.iter().map(|(_, c)| g.constant(c.clone())).collect();

        let mut outputs = Vec::with_capacity(inputs.len());
        let mut layer_outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let batch = g.value(x).rows();
            if g.value(x).cols() != self.embed_dim {
                return Err(Error::dim(
                    "dense_forward",
                    format!("input width {} vs embed {}", g.value(x).cols(), self.embed_dim),
                ));
            }
            let mut feeds = vec![x];
            let mut outs = vec![x];
            let mut step_layers = Vec::with_capacity(n);
            for k in 0..n {
                let input = g.concat(&feeds)?;
                let (h, c) = lstm_step(g, &cells[k], input, hs[k], cs[k])?;
                hs[k] = h;
                cs[k] = c;
                let out = match mode.gates {
                    Some(z) => g.scale_by(h, z, k)?,
                    None => h,
                };
                outs.push(out);
                step_layers.push(out);
                let visible = mode.keep.is_none_or(|keep| keep[k]);
                feeds.push(if visible {
                    out
                } else {
                    g.constant(Tensor::zeros(batch, self.hidden_dim))
                });
            }
            outputs.push(g.concat(&outs)?);
            layer_outputs.push(step_layers);
        }
        let state = StackState {
            layers: hs
                .iter()
                .zip(&cs)
                .map(|(&h, &c)| (g.value(h).clone(), g.value(c).clone()))
                .collect(),
        };
        Ok(StackOutput {
            outputs,
            layer_outputs,
            state,
        })
    }

    /// Remove layers whose mask bit is zero. Each surviving layer drops the
    /// weight rows that read deleted layers' output slices.
    pub fn delete_layers(&self, set: &ParamSet, keep: &[bool], out: &mut ParamSet, prefix: &str) -> Result<DenseStack> {
        if keep.len() != self.layers.len() {
            return Err(Error::dim("delete_layers", "mask length differs from depth"));
        }
        let h = self.hidden_dim;
        let mut layers = Vec::new();
        let mut layer_ids = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            if !keep[k] {
                continue;
            }
            let w = set.get(layer.w);
            // rows: [x (embed) | h_0 .. h_{k-1} | own recurrent h]
            let mut rows: Vec<usize> = (0..self.embed_dim).collect();
            for (j, &kept) in keep.iter().enumerate().take(k) {
                if kept {
                    let start = self.embed_dim + j * h;
                    rows.extend(start..start + h);
                }
            }
            let rec = layer.input_dim;
            rows.extend(rec..rec + h);
            let new_w = w.select_rows(&rows);
            let new_b = set.get(layer.b).clone();
            let pos = layers.len();
            layers.push(LstmLayer::from_tensors(
                out,
                &format!("{prefix}.layer{pos}"),
                new_w,
                new_b,
            )?);
            layer_ids.push(self.layer_ids[k]);
        }
        let stack = DenseStack {
            embed_dim: self.embed_dim,
            hidden_dim: h,
            layers,
            layer_ids,
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Column indices of `h_t` that survive deletion under `keep`.
    pub fn surviving_columns(&self, keep: &[bool]) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..self.embed_dim).collect();
        for (k, &kept) in keep.iter().enumerate() {
            if kept {
                let start = self.embed_dim + k * self.hidden_dim;
                cols.extend(start..start + self.hidden_dim);
            }
        }
        cols
    }
}

/// One keep-flag per layer, each layer dropped independently with
/// probability `p`. Drawn once per batch.
pub fn layerwise_dropout_masks(layers: usize, p: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..layers).map(|_| rng.gen::<f64>() >= p).collect()
}
