//! Finite-difference checks of every differentiable component on small
//! seeded instances. Used by the `grad-check` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dialog, ObjectFeatureSet, Round};
use crate::diffcore::{
    cell_step, grad_check, run_rnn, CellKind, CellParams, GradCheckReport, Graph, ParamId, ParamSet, RnnConfig,
    RnnParams, RnnState, Shape, Value, Var,
};
use crate::error::Result;
use crate::model::{
    attend_objects, lf_encode, mn_encode, round_loss, score_dot, score_gated, AttentionParams, EncoderConfig,
    EncoderInput, GatedParams, LfParams, MnParams, Model, ModelConfig, ModelKind,
};
use crate::vocab::{EmbeddingInit, TokenId};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Smallest nonzero gradient magnitude accepted at a check point. Central
/// differences at step 1e-5 carry roughly 1e-11 of rounding noise, so
/// elements much below this cannot be resolved against a 1e-4 relative
/// tolerance.
pub const MIN_RESOLVABLE_GRAD: f64 = 1e-6;
const MAX_REDRAWS: usize = 1000;

/// Sizes of the toy instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyShape {
    pub hidden: usize,
    pub embed: usize,
    pub d_img: usize,
    pub regions: usize,
    pub n_cand: usize,
    pub vocab: usize,
}

impl Default for ToyShape {
    fn default() -> Self {
        ToyShape {
            hidden: 3,
            embed: 3,
            d_img: 3,
            regions: 3,
            n_cand: 4,
            vocab: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

pub const COMPONENTS: [&str; 13] = [
    "lstm_step",
    "gru_step",
    "run_rnn/lstm",
    "run_rnn/gru",
    "attend_objects",
    "lf_encode",
    "mn_encode",
    "score_dot",
    "score_gated",
    "score_gated_scalar",
    "round_loss/lf_rcnn",
    "round_loss/mn_rcnn",
    "round_loss/mn_rcnn_wt",
];

struct Toy {
    rng: ChaCha8Rng,
    shape: ToyShape,
}

impl Toy {
    fn normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn tokens(&mut self, n: usize) -> Vec<TokenId> {
        (0..n)
            .map(|_| self.rng.random_range(2..self.shape.vocab as TokenId))
            .collect()
    }

    fn input(&mut self, ps: &mut ParamSet, name: &str, n: usize) -> Result<ParamId> {
        let data = self.normal(n);
        ps.add(name, Value::new(data, Shape::vector(n), true)?)
    }

    fn features(&mut self) -> ObjectFeatureSet {
        let (k, d) = (self.shape.regions, self.shape.d_img);
        ObjectFeatureSet {
            image_id: 1,
            d_img: d,
            features: self.normal(k * d),
        }
    }

    fn embedding(&mut self, ps: &mut ParamSet) -> Result<ParamId> {
        let (v, e) = (self.shape.vocab, self.shape.embed);
        ps.add("embedding", Value::zeros(Shape::matrix(v, e), true))
    }

    fn dialog(&mut self, rounds: usize) -> Dialog {
        let caption = self.tokens(3);
        let rounds = (0..rounds)
            .map(|t| Round {
                question: self.tokens(3),
                candidates: (0..self.shape.n_cand).map(|i| self.tokens(1 + i % 2)).collect(),
                gt_index: t % self.shape.n_cand,
                relevance: None,
            })
            .collect();
        Dialog {
            dialog_id: 1,
            image_id: 1,
            caption,
            rounds,
        }
    }

    /// Moves every trainable parameter to a generic point, uniform in
    /// `[-1, 1]`, away from the small-weight initialization.
    fn randomize(&mut self, ps: &mut ParamSet) {
        for v in ps.values_mut().filter(|v| v.requires_grad) {
            v.data.iter_mut().for_each(|x| *x = self.rng.random_range(-1.0..1.0));
        }
    }

    /// Re-draws the parameter point until every reverse-mode gradient
    /// element is exactly zero or at least [`MIN_RESOLVABLE_GRAD`]. Only the
    /// analytic gradient is consulted, never the finite differences.
    fn settle<F>(&mut self, ps: &mut ParamSet, f: &F) -> Result<()>
    where
        F: Fn(&mut Graph<'_>) -> Result<Var>,
    {
        for _ in 0..MAX_REDRAWS {
            self.randomize(ps);
            let grads = {
                let mut g = Graph::new(ps);
                let loss = f(&mut g)?;
                g.backward(loss)?
            };
            let resolvable = ps.ids().all(|id| {
                grads
                    .get(id)
                    .is_none_or(|gr| gr.iter().all(|&x| x == 0.0 || x.abs() >= MIN_RESOLVABLE_GRAD))
            });
            if resolvable {
                return Ok(());
            }
        }
        Ok(())
    }

    /// `c . x` for a fixed random `c`.
    fn probe(&mut self, n: usize) -> Vec<f64> {
        self.normal(n)
    }
}

fn dot_probe(g: &mut Graph<'_>, x: Var, c: &[f64]) -> Result<Var> {
    let c = g.vector(c.to_vec());
    g.dot(x, c)
}

fn check<F>(t: &mut Toy, ps: &mut ParamSet, step: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    t.settle(ps, &f)?;
    grad_check(ps, step, tol, f)
}

fn cell_check(t: &mut Toy, kind: CellKind, step: f64, tol: f64) -> Result<GradCheckReport> {
    let h = t.shape.hidden;
    let mut ps = ParamSet::new();
    let cell = CellParams::init(&mut ps, "cell", kind, t.shape.embed, h, &mut t.rng)?;
    let x = t.input(&mut ps, "x", t.shape.embed)?;
    let h0 = t.input(&mut ps, "h", h)?;
    let c0 = match kind {
        CellKind::Lstm => Some(t.input(&mut ps, "c", h)?),
        CellKind::Gru => None,
    };
    let probe = t.probe(2 * h);
    check(t, &mut ps, step, tol, |g| {
        let state = RnnState {
            hidden: g.param(h0),
            cell: c0.map(|c| g.param(c)),
        };
        let xv = g.param(x);
        let next = cell_step(g, xv, &state, &cell)?;
        let out = match next.cell {
            Some(c) => g.concat(&[next.hidden, c])?,
            None => g.concat(&[next.hidden, next.hidden])?,
        };
        dot_probe(g, out, &probe)
    })
}

fn rnn_check(t: &mut Toy, cell: CellKind, step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let cfg = RnnConfig {
        cell,
        hidden: t.shape.hidden,
        layers: 2,
        bidirectional: true,
    };
    let rnn = RnnParams::init(&mut ps, "rnn", t.shape.embed, cfg, &mut t.rng)?;
    let xs: Vec<ParamId> = (0..3)
        .map(|i| t.input(&mut ps, &format!("x{i}"), t.shape.embed))
        .collect::<Result<_>>()?;
    let probe = t.probe(cfg.output_dim());
    check(t, &mut ps, step, tol, |g| {
        let inputs: Vec<Var> = xs.iter().map(|&x| g.param(x)).collect();
        let out = run_rnn(g, &inputs, &rnn)?;
        dot_probe(g, out, &probe)
    })
}

fn attention_check(t: &mut Toy, step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut ps = ParamSet::new();
    let h = t.shape.hidden;
    let p = AttentionParams::init(&mut ps, "attn", h, t.shape.d_img, h, &mut t.rng)?;
    let q = t.input(&mut ps, "query", h)?;
    let f = t.features();
    let probe = t.probe(t.shape.d_img);
    check(t, &mut ps, step, tol, |g| {
        let qv = g.param(q);
        let (att, _) = attend_objects(g, qv, &f, &p)?;
        dot_probe(g, att, &probe)
    })
}

fn encoder_check(t: &mut Toy, late_fusion: bool, step: f64, tol: f64) -> Result<GradCheckReport> {
    let s = t.shape;
    let mut ps = ParamSet::new();
    let emb = t.embedding(&mut ps)?;
    let dialog = t.dialog(3);
    let f = t.features();
    let round = 2;
    let question = dialog.rounds[round].question.clone();
    let concat = dialog.history_concat(round);
    let history = dialog.history_rounds(round);
    let probe = t.probe(s.hidden);
    let input = |_: ()| EncoderInput {
        question: &question,
        caption: &dialog.caption,
        history_concat: &concat,
        history_rounds: &history,
        features: &f,
    };
    if late_fusion {
        let mut cfg = EncoderConfig::late_fusion(s.hidden);
        cfg.embed_trainable = true;
        let p = LfParams::init(&mut ps, &cfg, s.embed, s.d_img, &mut t.rng)?;
            check(t, &mut ps, step, tol, |g| {
            let e = g.param(emb);
            let out = lf_encode(g, &input(()), e, &p)?;
            dot_probe(g, out.vector, &probe)
        })
    } else {
        let cfg = EncoderConfig::memory_network(s.hidden);
        let p = MnParams::init(&mut ps, &cfg, s.embed, s.d_img, &mut t.rng)?;
            check(t, &mut ps, step, tol, |g| {
            let e = g.param(emb);
            let out = mn_encode(g, &input(()), e, &p)?;
            dot_probe(g, out.vector, &probe)
        })
    }
}

enum Scorer {
    Dot,
    Gated,
    GatedScalar,
}

fn scoring_check(t: &mut Toy, scorer: Scorer, step: f64, tol: f64) -> Result<GradCheckReport> {
    let s = t.shape;
    let mut ps = ParamSet::new();
    let ctx = t.input(&mut ps, "context", s.hidden)?;
    let cands = {
        let data = t.normal(s.n_cand * s.hidden);
        ps.add("candidates", Value::new(data, Shape::matrix(s.n_cand, s.hidden), true)?)?
    };
    let gated = match scorer {
        Scorer::Gated => Some(GatedParams::init(&mut ps, "gate", s.hidden, &mut t.rng)?),
        _ => None,
    };
    let scalar = match scorer {
        Scorer::GatedScalar => Some(crate::model::GatedScalarParams::init(&mut ps, "gate", s.hidden, &mut t.rng)?),
        _ => None,
    };
    let gt = t.rng.random_range(0..s.n_cand);
    check(t, &mut ps, step, tol, |g| {
        let (c, m) = (g.param(ctx), g.param(cands));
        let scores = match (&gated, &scalar) {
            (Some(p), _) => score_gated(g, c, m, p)?,
            (_, Some(p)) => crate::model::score_gated_scalar(g, c, m, p)?,
            _ => score_dot(g, c, m)?,
        };
        round_loss(g, &scores, gt)
    })
}

fn model_check(t: &mut Toy, kind: ModelKind, step: f64, tol: f64) -> Result<GradCheckReport> {
    let s = t.shape;
    let mut cfg = ModelConfig::new(kind, s.vocab, s.embed, s.d_img, s.hidden);
    cfg.encoder.embed_trainable = true;
    let emb = EmbeddingInit::random(s.vocab, s.embed, true, &mut t.rng);
    let mut model = Model::init(&cfg, &emb, &mut t.rng)?;
    let dialog = t.dialog(2);
    let f = t.features();
    let layout = model.clone();
    check(t, &mut model.params, step, tol, |g| layout.loss(g, &dialog, 1, &f))
}

/// Runs every component check. Each component draws its instance from its
/// own stream derived from `seed`.
pub fn run_suite(seed: u64, shape: ToyShape, step: f64, tol: f64) -> Result<Vec<NamedReport>> {
    let mut out = Vec::with_capacity(COMPONENTS.len());
    for (i, &name) in COMPONENTS.iter().enumerate() {
        let mut t = Toy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            shape,
        };
        t.rng.set_stream(i as u64);
        let report = match name {
            "lstm_step" => cell_check(&mut t, CellKind::Lstm, step, tol)?,
            "gru_step" => cell_check(&mut t, CellKind::Gru, step, tol)?,
            "run_rnn/lstm" => rnn_check(&mut t, CellKind::Lstm, step, tol)?,
            "run_rnn/gru" => rnn_check(&mut t, CellKind::Gru, step, tol)?,
            "attend_objects" => attention_check(&mut t, step, tol)?,
            "lf_encode" => encoder_check(&mut t, true, step, tol)?,
            "mn_encode" => encoder_check(&mut t, false, step, tol)?,
            "score_dot" => scoring_check(&mut t, Scorer::Dot, step, tol)?,
            "score_gated" => scoring_check(&mut t, Scorer::Gated, step, tol)?,
            "score_gated_scalar" => scoring_check(&mut t, Scorer::GatedScalar, step, tol)?,
            "round_loss/lf_rcnn" => model_check(&mut t, ModelKind::LfRcnn, step, tol)?,
            "round_loss/mn_rcnn" => model_check(&mut t, ModelKind::MnRcnn, step, tol)?,
            "round_loss/mn_rcnn_wt" => model_check(&mut t, ModelKind::MnRcnnWt, step, tol)?,
            _ => unreachable!("listed component"),
        };
        out.push(NamedReport {
            name: name.to_string(),
            report,
        });
    }
    Ok(out)
}
