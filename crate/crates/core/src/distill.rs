//! Similarity-distribution distillation from a frozen teacher.
//!
//! Row `i` of the similarity distribution is the softmax of `<e_j, e_i> / tau`
//! over every batch member `j`, self included. The loss is
//! `sum_i KL(P_s(i) || P_t(i))` between student and teacher rows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{check_tau, Tape, Var};
use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// How the distribution numerator pairs batch members.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlNumerator {
    /// Sample `i` against every `j`: a full n-way distribution per row.
    #[default]
    Pairwise,
    /// Only the self-similarity share `P(i,i)`, compared as a Bernoulli
    /// variable between student and teacher.
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub kl_numerator: KlNumerator,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            batch_size: 64,
            kl_numerator: KlNumerator::Pairwise,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "distillation batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Records the row-stochastic similarity distribution of `e` on `tape`.
pub fn similarity_distribution_var(tape: &mut Tape, e: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let et = tape.transpose(e);
    let sims = tape.matmul(e, et);
    tape.softmax_rows(sims, tau)
}

pub fn similarity_distribution(e: &EmbeddingBatch, tau: f64) -> Result<Matrix> {
    let mut tape = Tape::no_grad();
    let v = tape.constant(e.matrix().clone());
    let p = similarity_distribution_var(&mut tape, v, tau)?;
    Ok(tape.value(p).clone())
}

/// Log of the teacher's similarity distribution. Teacher rows enter as
/// constants and never receive gradients.
fn teacher_log_distribution(teacher: &Matrix, tau: f64) -> Result<Matrix> {
    let mut tape = Tape::no_grad();
    let t = tape.constant(teacher.clone());
    let tt = tape.transpose(t);
    let sims = tape.matmul(t, tt);
    let lp = tape.log_softmax_rows(sims, tau)?;
    Ok(tape.value(lp).clone())
}

/// Records the distillation loss for student embeddings `student` against
/// fixed teacher rows.
pub fn kl_distillation_loss(
    tape: &mut Tape,
    student: Var,
    teacher: &Matrix,
    tau: f64,
    numerator: KlNumerator,
) -> Result<Var> {
    check_tau(tau)?;
    let (n, _) = tape.shape(student);
    if teacher.rows() != n {
        return Err(Error::BatchSizeMismatch {
            student: n,
            teacher: teacher.rows(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }

    let log_t = teacher_log_distribution(teacher, tau)?;
    let st = tape.transpose(student);
    let sims = tape.matmul(student, st);
    let log_s = tape.log_softmax_rows(sims, tau)?;

    match numerator {
        KlNumerator::Pairwise => {
            let p_s = tape.exp(log_s);
            let log_t = tape.constant(log_t);
            let ratio = tape.sub(log_s, log_t);
            let terms = tape.mul(p_s, ratio);
            Ok(tape.sum_all(terms))
        }
        KlNumerator::Diagonal => {
            let eye = tape.constant(Matrix::identity(n));
            let masked = tape.mul(log_s, eye);
            let log_p = tape.sum_rows(masked);
            let p = tape.exp(log_p);
            let ones = tape.constant(Matrix::filled(n, 1, 1.0));
            let not_p = tape.sub(ones, p);
            let log_not_p = tape.log(not_p);

            let mut lq = Matrix::zeros(n, 1);
            let mut lnq = Matrix::zeros(n, 1);
            for i in 0..n {
                let l = log_t[(i, i)];
                lq[(i, 0)] = l;
                lnq[(i, 0)] = (-l.exp()).ln_1p();
            }
            let lq = tape.constant(lq);
            let lnq = tape.constant(lnq);
            let a = tape.sub(log_p, lq);
            let a = tape.mul(p, a);
            let b = tape.sub(log_not_p, lnq);
            let b = tape.mul(not_p, b);
            let terms = tape.add(a, b);
            Ok(tape.sum_all(terms))
        }
    }
}

/// Loss value for two embedding batches.
pub fn kl_distillation_value(student: &EmbeddingBatch, teacher: &EmbeddingBatch, tau: f64) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::BatchSizeMismatch {
            student: student.len(),
            teacher: teacher.len(),
        });
    }
    let mut tape = Tape::no_grad();
    let s = tape.constant(student.matrix().clone());
    let loss = kl_distillation_loss(&mut tape, s, teacher.matrix(), tau, KlNumerator::Pairwise)?;
    Ok(tape.value(loss).item())
}
