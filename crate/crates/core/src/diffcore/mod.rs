//! Reverse-mode differentiation restricted to the operations the dialog
//! models need, plus recurrent cells and a finite-difference checker.

mod graph;
mod gradcheck;
mod numeric;
mod params;
mod rnn;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use numeric::{log_softmax, sigmoid, softmax};
pub use params::{ParamGrads, ParamId, ParamSet, Shape, Value};
pub use rnn::{
    cell_step, gru_step, lstm_step, run_rnn, CellKind, CellParams, RnnConfig, RnnParams, RnnState,
};
