//! Memory bank read: query projection, attention over memory items, the
//! augmented hidden state, and nearest / second-nearest item lookup.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Result of querying the memory with a batch of hidden states.
#[derive(Clone, Debug)]
pub struct MemoryRead {
    /// `rows×d` queries `H·W_Q + b_Q`.
    pub query: Var,
    /// `rows×m` row-stochastic attention.
    pub attention: Var,
    /// `rows×d` attention-weighted memory items.
    pub augmented: Var,
    /// Most attended item per row.
    pub pos: Vec<usize>,
    /// Second most attended item per row.
    pub neg: Vec<usize>,
}

/// Plain-value view of one attention read, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSnapshot {
    pub attention: Tensor,
    pub query: Tensor,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl AttentionSnapshot {
    pub fn from_read(tape: &Tape, read: &MemoryRead) -> Self {
        Self {
            attention: tape.value(read.attention).clone(),
            query: tape.value(read.query).clone(),
            pos: read.pos.clone(),
            neg: read.neg.clone(),
        }
    }
}

/// Indices of the largest and second-largest entries. Exact ties resolve
/// to the lower index first.
pub fn nearest_two(scores: &[f64]) -> (usize, usize) {
    debug_assert!(scores.len() >= 2);
    let mut pos = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[pos] {
            pos = j;
        }
    }
    let mut neg = if pos == 0 { 1 } else { 0 };
    for (j, &s) in scores.iter().enumerate() {
        if j != pos && s > scores[neg] {
            neg = j;
        }
    }
    (pos, neg)
}

/// `Q = H·W_Q + b_Q`, `Att = softmax(Q·Mᵀ)`, `H_aug = Att·M`.
pub fn query_memory(tape: &mut Tape, hidden: Var, items: Var, query_w: Var, query_b: Var) -> Result<MemoryRead> {
    let m = tape.shape(items)[0];
    if m < 2 {
        return Err(Error::invalid(format!("memory needs at least 2 items, got {m}")));
    }
    let q_lin = tape.matmul(hidden, query_w)?;
    let query = tape.add_bias(q_lin, query_b)?;
    let items_t = tape.transpose(items)?;
    let logits = tape.matmul(query, items_t)?;
    let attention = tape.softmax(logits)?;
    let augmented = tape.matmul(attention, items)?;
    let att = tape.value(attention);
    let (pos, neg) = (0..att.rows()).map(|i| nearest_two(att.row(i))).unzip();
    Ok(MemoryRead {
        query,
        attention,
        augmented,
        pos,
        neg,
    })
}

/// Decoder initial state: `[H ‖ H_aug]·W_proj + b_proj`.
pub fn concat_augment(tape: &mut Tape, hidden: Var, augmented: Var, proj_w: Var, proj_b: Var) -> Result<Var> {
    let joined = tape.concat(&[hidden, augmented])?;
    let lin = tape.matmul(joined, proj_w)?;
    tape.add_bias(lin, proj_b)
}
