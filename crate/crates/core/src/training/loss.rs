use crate::error::{contract, Error, Result};
use crate::tensor::{Element, Tape, Var};

/// `Σ_j alpha[j] · CE_j` over stacked stream logits `[n·T × V]`.
///
/// `CE_j` is the mean cross-entropy of rows `j·T + t` against
/// `targets[t + j]` for `t < T - j`, skipping `pad` targets. A stream with
/// no position left (`j >= T`) or only padded targets contributes zero.
pub fn future_ngram_loss<E: Element>(
    tape: &mut Tape<E>,
    logits: Var,
    n: usize,
    targets: &[u32],
    alpha: &[f64],
    pad: u32,
) -> Result<Var> {
    if alpha.len() != n {
        return Err(contract(alloc::format!("{} loss weights for {} streams", alpha.len(), n)));
    }
    let t_len = targets.len();
    let shape = tape.shape(logits).to_vec();
    if t_len == 0 || shape.len() != 2 || shape[0] != n * t_len {
        return Err(Error::Shape { op: "future_ngram_loss", lhs: shape, rhs: alloc::vec![n, t_len] });
    }
    let mut total: Option<Var> = None;
    for (j, &a) in alpha.iter().enumerate().take(t_len) {
        let rows = tape.slice(logits, 0, j * t_len, t_len - j)?;
        let ce = tape.cross_entropy(rows, &targets[j..], pad)?;
        let weighted = tape.scale(ce, E::from_f64(a));
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    Ok(total.expect("at least one stream"))
}
