//! Layers built from graph ops. Each layer only holds parameter ids; values
//! live in a [`ParamStore`] passed to every forward call, so the same layer
//! can be evaluated against perturbed copies of its parameters.

use super::graph::{Graph, Var};
use super::params::{Initializer, ParamId, ParamStore};
use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Affine map `x · W + b` with `W: [in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let weight = store.insert(&wname, init.uniform(&wname, &[in_dim, out_dim], in_dim)?)?;
        let bias = if bias {
            let bname = format!("{name}.bias");
            Some(store.insert(&bname, init.uniform(&bname, &[out_dim], in_dim)?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    /// `[N × in] → [N × out]`
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b)?;
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        rows: usize,
        dim: usize,
    ) -> Result<Self> {
        // fan_in of 1 gives U(-1, 1), the usual scale for lookup tables
        let table = store.insert(name, init.uniform(name, &[rows, dim], 1)?)?;
        Ok(Self { table, rows, dim })
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, g: &mut Graph, store: &ParamStore, indices: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table)?;
        g.gather(t, indices)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, batch: usize, hidden: usize) -> Result<Self> {
        let h = g.constant(Tensor::zeros(&[batch, hidden])?)?;
        let c = g.constant(Tensor::zeros(&[batch, hidden])?)?;
        Ok(Self { h, c })
    }
}

/// LSTM cell whose input may arrive as several blocks, each with its own
/// `[in_b × 4h]` weight. Gate order along the 4h axis is input, forget,
/// cell, output. Pre-activations are summed as `h·W_hh + b` followed by the
/// input blocks in declaration order.
#[derive(Debug, Clone)]
pub struct LstmCell {
    input_weights: Vec<ParamId>,
    input_dims: Vec<usize>,
    w_hh: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl LstmCell {
    /// Single-input cell with parameters `{name}.w_ih`, `{name}.w_hh`, `{name}.bias`.
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Self::with_blocks(store, init, name, &[("ih", input_dim)], hidden)
    }

    /// Cell with named input blocks; block `b` gets parameter `{name}.w_{b}`.
    pub fn with_blocks(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        blocks: &[(&str, usize)],
        hidden: usize,
    ) -> Result<Self> {
        let mut input_weights = Vec::with_capacity(blocks.len());
        for (block, dim) in blocks {
            let pname = format!("{name}.w_{block}");
            input_weights.push(store.insert(&pname, init.uniform(&pname, &[*dim, 4 * hidden], *dim)?)?);
        }
        let hname = format!("{name}.w_hh");
        let w_hh = store.insert(&hname, init.uniform(&hname, &[hidden, 4 * hidden], hidden)?)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.insert(&format!("{name}.bias"), Tensor::new(vec![4 * hidden], b)?)?;
        Ok(Self {
            input_weights,
            input_dims: blocks.iter().map(|b| b.1).collect(),
            w_hh,
            bias,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn block_weight(&self, block: usize) -> ParamId {
        self.input_weights[block]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.input_weights.clone();
        ids.push(self.w_hh);
        ids.push(self.bias);
        ids
    }

    /// Gate contribution `x · W_block`, for inputs that stay fixed over
    /// many steps and can be projected once.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, block: usize, x: Var) -> Result<Var> {
        let w = g.param(store, self.input_weights[block])?;
        g.matmul(x, w)
    }

    /// One step with every block supplied as a raw input, in block order.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &[Var],
        state: &LstmState,
    ) -> Result<LstmState> {
        if inputs.len() != self.input_weights.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm_step",
                lhs: vec![inputs.len()],
                rhs: vec![self.input_weights.len()],
            });
        }
        let raw: Vec<(usize, Var)> = inputs.iter().copied().enumerate().collect();
        self.step_mixed(g, store, &raw, &[], state)
    }

    /// One step from raw `(block, input)` pairs followed by already
    /// projected contributions. The caller is responsible for covering every
    /// block exactly once across the two lists.
    pub fn step_mixed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        raw: &[(usize, Var)],
        projected: &[Var],
        state: &LstmState,
    ) -> Result<LstmState> {
        let h = self.hidden;
        if g.shape(state.h) != g.shape(state.c) || g.shape(state.h).get(1) != Some(&h) {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm_step",
                lhs: g.shape(state.h).to_vec(),
                rhs: g.shape(state.c).to_vec(),
            });
        }
        let w_hh = g.param(store, self.w_hh)?;
        let bias = g.param(store, self.bias)?;
        let mut z = g.matmul(state.h, w_hh)?;
        z = g.add_bias(z, bias)?;
        for &(block, x) in raw {
            let w = g.param(store, self.input_weights[block])?;
            let zx = g.matmul(x, w)?;
            z = g.add(z, zx)?;
        }
        for &p in projected {
            z = g.add(z, p)?;
        }
        let zi = g.slice_last(z, 0, h)?;
        let zf = g.slice_last(z, h, 2 * h)?;
        let zg = g.slice_last(z, 2 * h, 3 * h)?;
        let zo = g.slice_last(z, 3 * h, 4 * h)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h_new = g.mul(o, tc)?;
        Ok(LstmState { h: h_new, c })
    }
}

/// Output of a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BiLstmOutput {
    /// Per time step `[batch × 2h]`: forward half then backward half.
    pub outputs: Vec<Var>,
    /// Top-layer forward state after the last valid step `[batch × h]`.
    pub last_forward: Var,
    /// Top-layer backward state after reaching the first step `[batch × h]`.
    pub last_backward: Var,
}

/// Stacked bidirectional LSTM. Layer `l > 0` reads the `2h` outputs of layer `l-1`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    layers: Vec<(LstmCell, LstmCell)>,
    hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers.max(1) {
            let in_dim = if l == 0 { input_dim } else { 2 * hidden };
            let fwd = LstmCell::new(store, init, &format!("{name}.l{l}.fwd"), in_dim, hidden)?;
            let bwd = LstmCell::new(store, init, &format!("{name}.l{l}.bwd"), in_dim, hidden)?;
            layers.push((fwd, bwd));
        }
        Ok(Self { layers, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[(LstmCell, LstmCell)] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<BiLstmOutput> {
        self.forward_masked(g, store, seq, None)
    }

    /// Bidirectional pass over `seq` (each `[batch × in]`). With `masks`,
    /// rows whose mask is `false` at a step keep their previous state, so
    /// padded positions never influence valid ones in either direction.
    pub fn forward_masked(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seq: &[Var],
        masks: Option<&[Vec<bool>]>,
    ) -> Result<BiLstmOutput> {
        let first = *seq.first().ok_or(AutodiffError::EmptyInput { op: "bilstm" })?;
        if let Some(m) = masks {
            if m.len() != seq.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "bilstm",
                    lhs: vec![seq.len()],
                    rhs: vec![m.len()],
                });
            }
        }
        let batch = g.shape(first)[0];
        let steps = seq.len();
        let mut current: Vec<Var> = seq.to_vec();
        let mut last = (first, first);
        for (fwd, bwd) in &self.layers {
            let run = |g: &mut Graph, cell: &LstmCell, order: &mut dyn Iterator<Item = usize>| -> Result<(Vec<Option<Var>>, Var)> {
                let mut state = LstmState::zeros(g, batch, self.hidden)?;
                let mut outs = vec![None; steps];
                for t in order {
                    let next = cell.step(g, store, &[current[t]], &state)?;
                    state = match masks {
                        Some(m) if m[t].iter().any(|&k| !k) => LstmState {
                            h: g.blend(next.h, state.h, &m[t])?,
                            c: g.blend(next.c, state.c, &m[t])?,
                        },
                        _ => next,
                    };
                    outs[t] = Some(state.h);
                }
                Ok((outs, state.h))
            };
            let (f_out, f_last) = run(g, fwd, &mut (0..steps))?;
            let (b_out, b_last) = run(g, bwd, &mut (0..steps).rev())?;
            let mut next = Vec::with_capacity(steps);
            for t in 0..steps {
                next.push(g.concat(&[f_out[t].unwrap(), b_out[t].unwrap()])?);
            }
            current = next;
            last = (f_last, b_last);
        }
        Ok(BiLstmOutput {
            outputs: current,
            last_forward: last.0,
            last_backward: last.1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_store(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.tensor_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_everything_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let init = Initializer::new(1);
        let cell = LstmCell::new(&mut store, &init, "c", 3, 4).unwrap();
        zero_store(&mut store);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]).unwrap()).unwrap();
        let s0 = LstmState::zeros(&mut g, 2, 4).unwrap();
        let s1 = cell.step(&mut g, &store, &[x], &s0).unwrap();
        assert!(g.data(s1.h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let init = Initializer::new(1);
        LstmCell::new(&mut store, &init, "c", 3, 2).unwrap();
        assert_eq!(
            store.get("c.bias").unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn lstm_step_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            let init = Initializer::new(42);
            let cell = LstmCell::new(&mut store, &init, "c", 3, 5).unwrap();
            let mut g = Graph::new();
            let x = g
                .constant(Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.9]).unwrap())
                .unwrap();
            let s0 = LstmState::zeros(&mut g, 1, 5).unwrap();
            let s1 = cell.step(&mut g, &store, &[x], &s0).unwrap();
            g.data(s1.h).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    fn bilstm_with_mirrored_directions(input: usize, hidden: usize) -> (BiLstm, ParamStore) {
        let mut store = ParamStore::new();
        let init = Initializer::new(3);
        let bi = BiLstm::new(&mut store, &init, "bi", input, hidden, 1).unwrap();
        for suffix in ["w_ih", "w_hh", "bias"] {
            let src = store.get(&format!("bi.l0.fwd.{suffix}")).unwrap().clone();
            *store.get_mut(&format!("bi.l0.bwd.{suffix}")).unwrap() = src;
        }
        (bi, store)
    }

    #[test]
    fn single_step_directions_agree_with_shared_params() {
        let (bi, store) = bilstm_with_mirrored_directions(3, 4);
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::new(vec![1, 3], vec![0.5, -1.0, 0.25]).unwrap())
            .unwrap();
        let out = bi.forward(&mut g, &store, &[x]).unwrap();
        let o = g.data(out.outputs[0]);
        assert_eq!(o.len(), 8);
        assert_eq!(&o[..4], &o[4..]);
    }

    #[test]
    fn reversing_input_swaps_halves() {
        let (bi, store) = bilstm_with_mirrored_directions(2, 3);
        let xs = [[0.1, 0.7], [-0.4, 0.2], [0.9, -0.6]];
        let run = |order: &[usize]| {
            let mut g = Graph::new();
            let seq: Vec<Var> = order
                .iter()
                .map(|&i| g.constant(Tensor::new(vec![1, 2], xs[i].to_vec()).unwrap()).unwrap())
                .collect();
            let out = bi.forward(&mut g, &store, &seq).unwrap();
            out.outputs.iter().map(|&v| g.data(v).to_vec()).collect::<Vec<_>>()
        };
        let fwd = run(&[0, 1, 2]);
        let rev = run(&[2, 1, 0]);
        for t in 0..3 {
            let a = &fwd[t];
            let b = &rev[2 - t];
            for k in 0..3 {
                assert!((a[k] - b[3 + k]).abs() < 1e-15);
                assert!((a[3 + k] - b[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn output_width_is_twice_hidden_on_every_step() {
        let mut store = ParamStore::new();
        let init = Initializer::new(9);
        let bi = BiLstm::new(&mut store, &init, "bi", 3, 5, 2).unwrap();
        let mut g = Graph::new();
        let seq: Vec<Var> = (0..4)
            .map(|_| g.constant(Tensor::full(&[2, 3], 0.1).unwrap()).unwrap())
            .collect();
        let out = bi.forward(&mut g, &store, &seq).unwrap();
        assert!(out.outputs.iter().all(|&v| g.shape(v) == [2, 10]));
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, &Initializer::new(1), "bi", 3, 5, 1).unwrap();
        let mut g = Graph::new();
        assert!(bi.forward(&mut g, &store, &[]).is_err());
    }

    #[test]
    fn masked_padding_does_not_leak() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, &Initializer::new(5), "bi", 2, 3, 1).unwrap();
        // row 0 has two valid steps, the third is padding with arbitrary content
        let run = |pad: f64| {
            let mut g = Graph::new();
            let seq = vec![
                g.constant(Tensor::new(vec![1, 2], vec![0.2, 0.1]).unwrap()).unwrap(),
                g.constant(Tensor::new(vec![1, 2], vec![-0.3, 0.5]).unwrap()).unwrap(),
                g.constant(Tensor::new(vec![1, 2], vec![pad, pad]).unwrap()).unwrap(),
            ];
            let masks = vec![vec![true], vec![true], vec![false]];
            let out = bi.forward_masked(&mut g, &store, &seq, Some(&masks)).unwrap();
            (
                g.data(out.outputs[0]).to_vec(),
                g.data(out.last_forward).to_vec(),
            )
        };
        assert_eq!(run(0.0), run(7.5));
    }
}
