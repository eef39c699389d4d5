use serde::Serialize;

use crate::error::{check_label, LabError, Result};
use crate::mathcore::{Matrix, ProbVector};

/// Stacks `π(·|χ_l) − e_{y_l}` over positions: the SFT gap term, `V × L`.
pub fn g_sft(pi_columns: &[ProbVector], y: &[usize]) -> Result<Matrix> {
    if pi_columns.is_empty() {
        return Err(LabError::Domain("empty response".into()));
    }
    if pi_columns.len() != y.len() {
        return Err(LabError::Shape(format!("{} distributions for {} tokens", pi_columns.len(), y.len())));
    }
    let v = pi_columns[0].len();
    let mut g = Matrix::zeros(v, y.len());
    for (l, (p, &t)) in pi_columns.iter().zip(y).enumerate() {
        if p.len() != v {
            return Err(LabError::Shape("distributions differ in length".into()));
        }
        check_label(t, v)?;
        let mut col = g.column_mut(l);
        col.copy_from(p.as_vector());
        col[t] -= 1.0;
    }
    Ok(g)
}

/// Sequence log-probabilities that drive the DPO margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DpoState {
    pub beta: f64,
    pub ref_pos: f64,
    pub ref_neg: f64,
    pub cur_pos: f64,
    pub cur_neg: f64,
}

impl DpoState {
    pub fn new(beta: f64, ref_pos: f64, ref_neg: f64, cur_pos: f64, cur_neg: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(LabError::Config(format!("beta {beta} must be positive")));
        }
        if [ref_pos, ref_neg, cur_pos, cur_neg].iter().any(|x| !x.is_finite()) {
            return Err(LabError::Numeric("non-finite log-probability".into()));
        }
        Ok(Self { beta, ref_pos, ref_neg, cur_pos, cur_neg })
    }

    /// `b = β[(log π⁺ − log π_ref⁺) − (log π⁻ − log π_ref⁻)]`.
    pub fn margin(&self) -> f64 {
        self.beta * ((self.cur_pos - self.ref_pos) - (self.cur_neg - self.ref_neg))
    }

    /// `a = sigmoid(b)`; 1/2 whenever the policy matches the reference log-ratio.
    pub fn gate(&self) -> f64 {
        sigmoid(self.margin())
    }

    /// `−log sigmoid(b)`, computed without overflow.
    pub fn loss(&self) -> f64 {
        let b = self.margin();
        if b > 0.0 {
            (-b).exp().ln_1p()
        } else {
            -b + b.exp().ln_1p()
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpoGate {
    pub a: f64,
    /// `β(1−a)(π⁺ − e⁺)`, equal to the loss gradient w.r.t. the chosen logits.
    pub g_plus: Matrix,
    /// `β(1−a)(π⁻ − e⁻)`. The loss gradient w.r.t. the rejected logits is
    /// `−g_minus`: the rejected response is pushed down.
    pub g_minus: Matrix,
}

/// Scales both SFT gap terms by the margin-dependent factor `β(1−a)`.
pub fn dpo_gate(state: &DpoState, pi_pos: &[ProbVector], y_pos: &[usize], pi_neg: &[ProbVector], y_neg: &[usize]) -> Result<DpoGate> {
    let state = DpoState::new(state.beta, state.ref_pos, state.ref_neg, state.cur_pos, state.cur_neg)?;
    let a = state.gate();
    let scale = state.beta * (1.0 - a);
    Ok(DpoGate { a, g_plus: g_sft(pi_pos, y_pos)? * scale, g_minus: g_sft(pi_neg, y_neg)? * scale })
}
