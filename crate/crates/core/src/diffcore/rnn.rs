use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

impl RnnConfig {
    /// Width of the sequence encoding produced by [`run_rnn`].
    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden
        } else {
            self.hidden
        }
    }
}

/// Parameters of a single cell (one layer, one direction).
///
/// LSTM gates are stacked `[input, forget, candidate, output]` and share one
/// bias. GRU gates are stacked `[reset, update, candidate]` with separate
/// input and hidden biases, since the reset gate multiplies the hidden-side
/// candidate term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: Option<ParamId>,
}

impl CellParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let g = kind.gates() * hidden;
        let w_x = params.add_weight(format!("{prefix}.w_x"), g, input, rng)?;
        let w_h = params.add_weight(format!("{prefix}.w_h"), g, hidden, rng)?;
        let b_x = params.add_bias(format!("{prefix}.b_x"), g)?;
        let b_h = match kind {
            CellKind::Lstm => None,
            CellKind::Gru => Some(params.add_bias(format!("{prefix}.b_h"), g)?),
        };
        Ok(CellParams {
            kind,
            input,
            hidden,
            w_x,
            w_h,
            b_x,
            b_h,
        })
    }
}

/// Recurrent state. `cell` is only present for LSTMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnState {
    pub hidden: Var,
    pub cell: Option<Var>,
}

impl RnnState {
    pub fn zeros(g: &mut Graph<'_>, params: &CellParams) -> Self {
        let hidden = g.zeros(params.hidden);
        let cell = match params.kind {
            CellKind::Lstm => Some(g.zeros(params.hidden)),
            CellKind::Gru => None,
        };
        RnnState { hidden, cell }
    }
}

fn check_dims(g: &Graph<'_>, x: Var, state: &RnnState, p: &CellParams) -> Result<()> {
    let (xl, hl) = (g.shape(x).len(), g.shape(state.hidden).len());
    if xl != p.input || hl != p.hidden {
        return Err(Error::shape(format!(
            "cell expects input {} / hidden {}, got {xl} / {hl}",
            p.input, p.hidden
        )));
    }
    Ok(())
}

/// One LSTM step:
/// `c' = sigmoid(f) * c + sigmoid(i) * tanh(g)`, `h' = sigmoid(o) * tanh(c')`.
pub fn lstm_step(g: &mut Graph<'_>, x: Var, state: &RnnState, p: &CellParams) -> Result<RnnState> {
    if p.kind != CellKind::Lstm {
        return Err(Error::shape("lstm_step given GRU parameters"));
    }
    check_dims(g, x, state, p)?;
    let cell = state
        .cell
        .ok_or_else(|| Error::shape("lstm_step needs a cell state"))?;
    if g.shape(cell).len() != p.hidden {
        return Err(Error::shape("lstm cell state width"));
    }
    let h = p.hidden;
    let (w_x, w_h, b) = (g.param(p.w_x), g.param(p.w_h), g.param(p.b_x));
    let xs = g.matvec(w_x, x)?;
    let hs = g.matvec(w_h, state.hidden)?;
    let pre = g.add(xs, hs)?;
    let pre = g.add(pre, b)?;

    let i = g.slice(pre, 0, h)?;
    let f = g.slice(pre, h, h)?;
    let c_hat = g.slice(pre, 2 * h, h)?;
    let o = g.slice(pre, 3 * h, h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let c_hat = g.tanh(c_hat);
    let o = g.sigmoid(o);

    let keep = g.mul(f, cell)?;
    let write = g.mul(i, c_hat)?;
    let new_cell = g.add(keep, write)?;
    let squashed = g.tanh(new_cell);
    let hidden = g.mul(o, squashed)?;
    Ok(RnnState {
        hidden,
        cell: Some(new_cell),
    })
}

/// One GRU step:
/// `n = tanh(Wx_n x + b_n + r * (Wh_n h + bh_n))`, `h' = (1 - z) * n + z * h`.
pub fn gru_step(g: &mut Graph<'_>, x: Var, state: &RnnState, p: &CellParams) -> Result<RnnState> {
    if p.kind != CellKind::Gru {
        return Err(Error::shape("gru_step given LSTM parameters"));
    }
    check_dims(g, x, state, p)?;
    let h = p.hidden;
    let b_h = p.b_h.ok_or_else(|| Error::shape("gru_step needs a hidden bias"))?;
    let (w_x, w_h, b_x, b_h) = (g.param(p.w_x), g.param(p.w_h), g.param(p.b_x), g.param(b_h));
    let gx = g.matvec(w_x, x)?;
    let gx = g.add(gx, b_x)?;
    let gh = g.matvec(w_h, state.hidden)?;
    let gh = g.add(gh, b_h)?;

    let rz_x = g.slice(gx, 0, 2 * h)?;
    let rz_h = g.slice(gh, 0, 2 * h)?;
    let rz = g.add(rz_x, rz_h)?;
    let rz = g.sigmoid(rz);
    let r = g.slice(rz, 0, h)?;
    let z = g.slice(rz, h, h)?;

    let n_x = g.slice(gx, 2 * h, h)?;
    let n_h = g.slice(gh, 2 * h, h)?;
    let gated = g.mul(r, n_h)?;
    let n = g.add(n_x, gated)?;
    let n = g.tanh(n);

    // (1 - z) * n + z * h == n + z * (h - n)
    let diff = g.sub(state.hidden, n)?;
    let carry = g.mul(z, diff)?;
    let hidden = g.add(n, carry)?;
    Ok(RnnState { hidden, cell: None })
}

pub fn cell_step(g: &mut Graph<'_>, x: Var, state: &RnnState, p: &CellParams) -> Result<RnnState> {
    match p.kind {
        CellKind::Lstm => lstm_step(g, x, state, p),
        CellKind::Gru => gru_step(g, x, state, p),
    }
}

/// A stacked, optionally bidirectional recurrent encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnnParams {
    pub config: RnnConfig,
    pub input: usize,
    /// Per layer: forward cell and, when bidirectional, backward cell.
    pub layers: Vec<(CellParams, Option<CellParams>)>,
}

impl RnnParams {
    fn layer_input(config: &RnnConfig, input: usize, layer: usize) -> usize {
        if layer == 0 {
            input
        } else {
            config.output_dim()
        }
    }

    pub fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        config: RnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(Error::Config(format!("{prefix}: rnn needs layers >= 1 and hidden >= 1")));
        }
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let inp = Self::layer_input(&config, input, l);
            let fwd = CellParams::init(params, &format!("{prefix}.l{l}.fwd"), config.cell, inp, config.hidden, rng)?;
            let bwd = if config.bidirectional {
                Some(CellParams::init(params, &format!("{prefix}.l{l}.bwd"), config.cell, inp, config.hidden, rng)?)
            } else {
                None
            };
            layers.push((fwd, bwd));
        }
        Ok(RnnParams {
            config,
            input,
            layers,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }
}

fn run_direction<'a>(
    g: &mut Graph<'_>,
    inputs: impl Iterator<Item = &'a Var>,
    p: &CellParams,
) -> Result<Vec<Var>> {
    let mut state = RnnState::zeros(g, p);
    let mut out = Vec::new();
    for &x in inputs {
        state = cell_step(g, x, &state, p)?;
        out.push(state.hidden);
    }
    Ok(out)
}

/// Encodes a sequence to a single vector: the last layer's final hidden
/// state, or for bidirectional encoders the final forward state concatenated
/// with the final backward state (the backward pass ends at position 0).
pub fn run_rnn(g: &mut Graph<'_>, inputs: &[Var], params: &RnnParams) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut seq = inputs.to_vec();
    let n_layers = params.layers.len();
    for (l, (fwd, bwd)) in params.layers.iter().enumerate() {
        let forward = run_direction(g, seq.iter(), fwd)?;
        let backward = match bwd {
            Some(bwd) => {
                let mut b = run_direction(g, seq.iter().rev(), bwd)?;
                b.reverse();
                Some(b)
            }
            None => None,
        };
        let last = l + 1 == n_layers;
        match (backward, last) {
            (None, true) => return Ok(*forward.last().expect("non-empty")),
            (Some(b), true) => return g.concat(&[*forward.last().expect("non-empty"), b[0]]),
            (None, false) => seq = forward,
            (Some(b), false) => {
                seq = forward
                    .iter()
                    .zip(&b)
                    .map(|(&f, &bk)| g.concat(&[f, bk]))
                    .collect::<Result<_>>()?;
            }
        }
    }
    unreachable!("rnn has at least one layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::grad_check;
    use crate::diffcore::params::{Shape, Value};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_out(params: &mut ParamSet) {
        for v in params.values_mut() {
            v.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn cfg(cell: CellKind, layers: usize, bidirectional: bool) -> RnnConfig {
        RnnConfig {
            cell,
            hidden: 3,
            layers,
            bidirectional,
        }
    }

    #[test]
    fn zero_params_give_zero_state() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut ps = ParamSet::new();
            let cp = CellParams::init(&mut ps, "c", kind, 2, 3, &mut rng).unwrap();
            zero_out(&mut ps);
            let mut g = Graph::new(&ps);
            let x = g.vector(vec![0.7, -1.3]);
            let s0 = RnnState::zeros(&mut g, &cp);
            let s1 = cell_step(&mut g, x, &s0, &cp).unwrap();
            assert_eq!(g.value(s1.hidden), &[0.0; 3]);
            if let Some(c) = s1.cell {
                assert_eq!(g.value(c), &[0.0; 3]);
            }
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let cp = CellParams::init(&mut ps, "c", CellKind::Lstm, 2, 3, &mut rng).unwrap();
        zero_out(&mut ps);
        ps.get_mut(cp.b_x).data[3..6].iter_mut().for_each(|b| *b = 1e3);
        let mut g = Graph::new(&ps);
        let x = g.vector(vec![0.4, 0.9]);
        let h = g.vector(vec![0.1, -0.2, 0.3]);
        let c = g.vector(vec![0.5, -0.25, 0.8]);
        let state = RnnState { hidden: h, cell: Some(c) };
        let next = lstm_step(&mut g, x, &state, &cp).unwrap();
        for (a, b) in g.value(next.cell.unwrap()).iter().zip([0.5, -0.25, 0.8]) {
            assert!((a - b).abs() < 1e-6);
        }
        // input unchanged
        assert_eq!(g.value(c), &[0.5, -0.25, 0.8]);
    }

    #[test]
    fn saturated_update_gate_keeps_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let cp = CellParams::init(&mut ps, "c", CellKind::Gru, 2, 3, &mut rng).unwrap();
        zero_out(&mut ps);
        ps.get_mut(cp.b_x).data[3..6].iter_mut().for_each(|b| *b = 1e3);
        let mut g = Graph::new(&ps);
        let x = g.vector(vec![0.4, 0.9]);
        let h = g.vector(vec![0.1, -0.2, 0.3]);
        let next = gru_step(&mut g, x, &RnnState { hidden: h, cell: None }, &cp).unwrap();
        for (a, b) in g.value(next.hidden).iter().zip([0.1, -0.2, 0.3]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let cp = CellParams::init(&mut ps, "c", CellKind::Gru, 2, 3, &mut rng).unwrap();
        let mut g = Graph::new(&ps);
        let x = g.vector(vec![1.0; 5]);
        let s = RnnState::zeros(&mut g, &cp);
        assert!(matches!(gru_step(&mut g, x, &s, &cp), Err(Error::Shape(_))));
        assert!(matches!(lstm_step(&mut g, x, &s, &cp), Err(Error::Shape(_))));
    }

    #[test]
    fn length_one_sequence_is_one_step() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut ps = ParamSet::new();
            let rp = RnnParams::init(&mut ps, "r", 2, cfg(kind, 1, false), &mut rng).unwrap();
            let mut g = Graph::new(&ps);
            let x = g.vector(vec![0.3, -0.6]);
            let enc = run_rnn(&mut g, &[x], &rp).unwrap();
            let s0 = RnnState::zeros(&mut g, &rp.layers[0].0);
            let s1 = cell_step(&mut g, x, &s0, &rp.layers[0].0).unwrap();
            assert_eq!(g.value(enc), g.value(s1.hidden));
        }
    }

    #[test]
    fn palindrome_with_tied_directions_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        let rp = RnnParams::init(&mut ps, "r", 2, cfg(CellKind::Gru, 1, true), &mut rng).unwrap();
        let (f, b) = (rp.layers[0].0, rp.layers[0].1.unwrap());
        for (src, dst) in [(f.w_x, b.w_x), (f.w_h, b.w_h), (f.b_x, b.b_x), (f.b_h.unwrap(), b.b_h.unwrap())] {
            let data = ps.get(src).data.clone();
            ps.get_mut(dst).data = data;
        }
        let mut g = Graph::new(&ps);
        let seq: Vec<Var> = [[0.1, 0.2], [0.9, -0.4], [-0.3, 0.5], [0.9, -0.4], [0.1, 0.2]]
            .iter()
            .map(|v| g.vector(v.to_vec()))
            .collect();
        let enc = run_rnn(&mut g, &seq, &rp).unwrap();
        let v = g.value(enc);
        assert_eq!(&v[..3], &v[3..]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ps = ParamSet::new();
        let rp = RnnParams::init(&mut ps, "r", 2, cfg(CellKind::Lstm, 2, false), &mut rng).unwrap();
        let mut g = Graph::new(&ps);
        assert!(matches!(run_rnn(&mut g, &[], &rp), Err(Error::EmptySequence)));
    }

    #[test]
    fn run_rnn_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamSet::new();
        let rp = RnnParams::init(&mut ps, "r", 2, cfg(CellKind::Lstm, 2, true), &mut rng).unwrap();
        let run = || {
            let mut g = Graph::new(&ps);
            let seq: Vec<Var> = (0..6).map(|t| g.vector(vec![t as f64 * 0.1, -0.2])).collect();
            let e = run_rnn(&mut g, &seq, &rp).unwrap();
            g.value(e).to_vec()
        };
        assert_eq!(run(), run());
    }

    fn random_sequence_check(kind: CellKind, layers: usize, bidirectional: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let rp = RnnParams::init(&mut ps, "r", 3, cfg(kind, layers, bidirectional), &mut rng).unwrap();
        let xs: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs = ps.add("inputs", Value::new(xs, Shape::matrix(5, 3), true).unwrap()).unwrap();
        let target: Vec<f64> = (0..rp.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check(&mut ps, 1e-5, 1e-4, |g| {
            let m = g.param(xs);
            let seq = (0..5).map(|t| g.row(m, t)).collect::<Result<Vec<_>>>()?;
            let enc = run_rnn(g, &seq, &rp)?;
            let t = g.vector(target.clone());
            let d = g.dot(enc, t)?;
            let sq = g.mul(enc, enc)?;
            let s = g.sum(sq);
            g.add(d, s)
        })
        .unwrap();
        assert!(report.passed, "{kind:?} layers={layers} bi={bidirectional}: {report}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        random_sequence_check(CellKind::Lstm, 1, false, 10);
        random_sequence_check(CellKind::Lstm, 2, false, 11);
        random_sequence_check(CellKind::Gru, 1, true, 12);
        random_sequence_check(CellKind::Gru, 2, true, 13);
    }
}
