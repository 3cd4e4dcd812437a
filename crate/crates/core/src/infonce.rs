//! InfoNCE over a query, its positive and `k` mined negatives.

use crate::autodiff::{check_tau, Tape, Var};
use crate::encoder::UNIT_NORM_TOL;
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

/// One query with its positive and negatives, all unit rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveTriple {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Matrix,
}

impl ContrastiveTriple {
    pub fn new(query: Vec<f64>, positive: Vec<f64>, negatives: Matrix) -> Result<Self> {
        let d = query.len();
        if positive.len() != d {
            return Err(Error::dim(d, positive.len(), "positive dimension"));
        }
        if negatives.cols() != d {
            return Err(Error::dim(d, negatives.cols(), "negative dimension"));
        }
        if negatives.rows() == 0 {
            return Err(Error::InvalidConfig("at least one negative is required".into()));
        }
        let rows = std::iter::once(query.as_slice())
            .chain(std::iter::once(positive.as_slice()))
            .chain(negatives.iter_rows());
        for (row, r) in rows.enumerate() {
            let n = norm(r);
            if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
                return Err(Error::NonUnitRow { row, norm: n });
            }
        }
        Ok(Self {
            query,
            positive,
            negatives,
        })
    }

    pub fn k(&self) -> usize {
        self.negatives.rows()
    }
}

/// Records `-log softmax([cos(q, pos), cos(q, neg_1..k)] / tau)[0]` for a
/// single query. `query` and `positive` are 1 x d, `negatives` is k x d.
pub fn infonce_hard_loss(
    tape: &mut Tape,
    query: Var,
    positive: Var,
    negatives: Var,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let cands = tape.concat_rows(&[positive, negatives]);
    let ct = tape.transpose(cands);
    let logits = tape.matmul(query, ct);
    let log_p = tape.log_softmax_rows(logits, tau)?;
    let k1 = tape.shape(logits).1;
    let mut pick = Matrix::zeros(1, k1);
    pick[(0, 0)] = -1.0;
    let pick = tape.constant(pick);
    let picked = tape.mul(log_p, pick);
    Ok(tape.sum_all(picked))
}

pub fn infonce_value(triple: &ContrastiveTriple, tau: f64) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let q = tape.constant(Matrix::from_vec(1, triple.query.len(), triple.query.clone())?);
    let p = tape.constant(Matrix::from_vec(
        1,
        triple.positive.len(),
        triple.positive.clone(),
    )?);
    let n = tape.constant(triple.negatives.clone());
    let loss = infonce_hard_loss(&mut tape, q, p, n, tau)?;
    Ok(tape.value(loss).item())
}

/// Mean InfoNCE over several queries whose rows all live in `emb`.
/// `negatives[i]` holds the `k` negative rows of query `i`; every query must
/// have the same `k`.
pub fn batched_infonce(
    tape: &mut Tape,
    emb: Var,
    queries: &[usize],
    positives: &[usize],
    negatives: &[Vec<usize>],
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    let m = queries.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if positives.len() != m || negatives.len() != m {
        return Err(Error::dim(
            m,
            positives.len().min(negatives.len()),
            "query layout",
        ));
    }
    let k = negatives[0].len();
    if k == 0 {
        return Err(Error::InvalidConfig("at least one negative is required".into()));
    }
    let width = k + 1;
    let mut q_rows = Vec::with_capacity(m * width);
    let mut c_rows = Vec::with_capacity(m * width);
    for i in 0..m {
        if negatives[i].len() != k {
            return Err(Error::dim(k, negatives[i].len(), "negatives per query"));
        }
        q_rows.extend(std::iter::repeat_n(queries[i], width));
        c_rows.push(positives[i]);
        c_rows.extend_from_slice(&negatives[i]);
    }
    let rows = tape.shape(emb).0;
    if let Some(&bad) = q_rows.iter().chain(&c_rows).find(|&&r| r >= rows) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: rows,
        });
    }

    let qv = tape.gather_rows(emb, &q_rows);
    let cv = tape.gather_rows(emb, &c_rows);
    let prod = tape.mul(qv, cv);
    let cos = tape.sum_rows(prod);
    let logits = tape.reshape(cos, m, width);
    let log_p = tape.log_softmax_rows(logits, tau)?;
    let mut pick = Matrix::zeros(m, width);
    for i in 0..m {
        pick[(i, 0)] = -1.0 / m as f64;
    }
    let pick = tape.constant(pick);
    let picked = tape.mul(log_p, pick);
    Ok(tape.sum_all(picked))
}
