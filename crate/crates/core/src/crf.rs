//! Linear-chain CRF over the four BMES labels.
//!
//! Transition scores live in an `(L+2) x (L+2)` matrix whose last two
//! indices are the virtual START and END labels. Moving into START or out of
//! END is always `-inf`.

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::tensor::Matrix;

/// Number of real labels.
pub const NUM_LABELS: usize = 4;
pub const START: usize = NUM_LABELS;
pub const END: usize = NUM_LABELS + 1;
pub const NUM_STATES: usize = NUM_LABELS + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Transitions<T> {
    scores: Matrix<T>,
}

impl<T: Scalar> Transitions<T> {
    /// Wraps an `(L+2) x (L+2)` matrix, forcing the START column and END row to `-inf`.
    pub fn from_matrix(mut scores: Matrix<T>) -> Result<Self> {
        if scores.shape() != (NUM_STATES, NUM_STATES) {
            return Err(Error::shape(format!(
                "transitions must be {NUM_STATES}x{NUM_STATES}, got {:?}",
                scores.shape()
            )));
        }
        for k in 0..NUM_STATES {
            scores.set(k, START, T::neg_infinity());
            scores.set(END, k, T::neg_infinity());
        }
        Ok(Transitions { scores })
    }

    pub fn zeros() -> Self {
        Self::from_matrix(Matrix::zeros(NUM_STATES, NUM_STATES)).expect("fixed shape")
    }

    #[inline]
    pub fn score(&self, from: usize, to: usize) -> T {
        self.scores.get(from, to)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.scores
    }
}

fn check_emissions<T: Scalar>(emissions: &Matrix<T>) -> Result<()> {
    if emissions.rows() == 0 {
        return Err(Error::invalid("CRF over an empty sequence"));
    }
    if emissions.cols() != NUM_LABELS {
        return Err(Error::shape(format!(
            "emissions must have {NUM_LABELS} columns, got {}",
            emissions.cols()
        )));
    }
    Ok(())
}

/// Forward recursion in log space. `alpha[i][y]` covers START..y_i inclusive of emission i.
fn forward_table<T: Scalar>(emissions: &Matrix<T>, trans: &Transitions<T>) -> Matrix<T> {
    let n = emissions.rows();
    let mut alpha = Matrix::zeros(n, NUM_LABELS);
    for y in 0..NUM_LABELS {
        alpha.set(0, y, trans.score(START, y) + emissions.get(0, y));
    }
    let mut buf = [T::zero(); NUM_LABELS];
    for i in 1..n {
        for y in 0..NUM_LABELS {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(i - 1, p) + trans.score(p, y);
            }
            alpha.set(i, y, log_sum_exp(&buf) + emissions.get(i, y));
        }
    }
    alpha
}

/// `beta[i][y]` covers everything after position i, including y_n -> END.
fn backward_table<T: Scalar>(emissions: &Matrix<T>, trans: &Transitions<T>) -> Matrix<T> {
    let n = emissions.rows();
    let mut beta = Matrix::zeros(n, NUM_LABELS);
    for y in 0..NUM_LABELS {
        beta.set(n - 1, y, trans.score(y, END));
    }
    let mut buf = [T::zero(); NUM_LABELS];
    for i in (0..n - 1).rev() {
        for y in 0..NUM_LABELS {
            for (q, b) in buf.iter_mut().enumerate() {
                *b = trans.score(y, q) + emissions.get(i + 1, q) + beta.get(i + 1, q);
            }
            beta.set(i, y, log_sum_exp(&buf));
        }
    }
    beta
}

fn close<T: Scalar>(alpha: &Matrix<T>, trans: &Transitions<T>) -> T {
    let n = alpha.rows();
    let mut buf = [T::zero(); NUM_LABELS];
    for (y, b) in buf.iter_mut().enumerate() {
        *b = alpha.get(n - 1, y) + trans.score(y, END);
    }
    log_sum_exp(&buf)
}

/// Log of the sum of exp(score) over every label sequence.
pub fn log_partition<T: Scalar>(emissions: &Matrix<T>, trans: &Transitions<T>) -> Result<T> {
    check_emissions(emissions)?;
    Ok(close(&forward_table(emissions, trans), trans))
}

/// Emission plus transition score of one path, including START and END transitions.
pub fn sequence_score<T: Scalar>(
    emissions: &Matrix<T>,
    trans: &Transitions<T>,
    labels: &[usize],
) -> Result<T> {
    check_emissions(emissions)?;
    if labels.len() != emissions.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} positions",
            labels.len(),
            emissions.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_LABELS) {
        return Err(Error::invalid(format!("label index {bad} out of range")));
    }
    let mut prev = START;
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        total += emissions.get(i, y) + trans.score(prev, y);
        prev = y;
    }
    Ok(total + trans.score(prev, END))
}

/// `-log P(gold | emissions)`.
pub fn nll<T: Scalar>(emissions: &Matrix<T>, trans: &Transitions<T>, gold: &[usize]) -> Result<T> {
    let score = sequence_score(emissions, trans, gold)?;
    Ok(log_partition(emissions, trans)? - score)
}

/// NLL together with its gradients: marginals minus gold indicators, for
/// emissions (`n x L`) and transitions (`(L+2) x (L+2)`).
pub fn nll_with_grad<T: Scalar>(
    emissions: &Matrix<T>,
    trans: &Transitions<T>,
    gold: &[usize],
) -> Result<(T, Matrix<T>, Matrix<T>)> {
    let score = sequence_score(emissions, trans, gold)?;
    let n = emissions.rows();
    let alpha = forward_table(emissions, trans);
    let beta = backward_table(emissions, trans);
    let log_z = close(&alpha, trans);
    if !log_z.is_finite() {
        return Err(Error::invalid("CRF partition function is not finite"));
    }

    let mut d_em = Matrix::zeros(n, NUM_LABELS);
    let mut d_tr = Matrix::zeros(NUM_STATES, NUM_STATES);
    for i in 0..n {
        for y in 0..NUM_LABELS {
            d_em.set(i, y, (alpha.get(i, y) + beta.get(i, y) - log_z).exp());
        }
    }
    for y in 0..NUM_LABELS {
        let start = (trans.score(START, y) + emissions.get(0, y) + beta.get(0, y) - log_z).exp();
        d_tr.set(START, y, start);
        let end = (alpha.get(n - 1, y) + trans.score(y, END) - log_z).exp();
        d_tr.set(y, END, end);
    }
    for i in 1..n {
        for p in 0..NUM_LABELS {
            for q in 0..NUM_LABELS {
                let t = trans.score(p, q);
                if t == T::neg_infinity() {
                    continue;
                }
                let m = (alpha.get(i - 1, p) + t + emissions.get(i, q) + beta.get(i, q) - log_z)
                    .exp();
                let cur = d_tr.get(p, q);
                d_tr.set(p, q, cur + m);
            }
        }
    }

    let mut prev = START;
    for (i, &y) in gold.iter().enumerate() {
        let e = d_em.get(i, y);
        d_em.set(i, y, e - T::one());
        let t = d_tr.get(prev, y);
        d_tr.set(prev, y, t - T::one());
        prev = y;
    }
    let t = d_tr.get(prev, END);
    d_tr.set(prev, END, t - T::one());

    Ok((log_z - score, d_em, d_tr))
}

/// Highest-scoring label sequence and its score.
///
/// Ties resolve to the lowest label index, both for the final label and at
/// every backpointer.
pub fn viterbi<T: Scalar>(emissions: &Matrix<T>, trans: &Transitions<T>) -> Result<(Vec<usize>, T)> {
    check_emissions(emissions)?;
    let n = emissions.rows();
    let mut delta = Matrix::zeros(n, NUM_LABELS);
    let mut back = vec![[0usize; NUM_LABELS]; n];
    for y in 0..NUM_LABELS {
        delta.set(0, y, trans.score(START, y) + emissions.get(0, y));
    }
    for i in 1..n {
        for y in 0..NUM_LABELS {
            let mut best = T::neg_infinity();
            let mut arg = 0;
            for p in 0..NUM_LABELS {
                let s = delta.get(i - 1, p) + trans.score(p, y);
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            back[i][y] = arg;
            delta.set(i, y, best + emissions.get(i, y));
        }
    }
    let mut best = T::neg_infinity();
    let mut last = 0;
    for y in 0..NUM_LABELS {
        let s = delta.get(n - 1, y) + trans.score(y, END);
        if s > best {
            best = s;
            last = y;
        }
    }
    if best == T::neg_infinity() {
        return Err(Error::invalid("no label sequence has finite score"));
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i][path[i]];
    }
    Ok((path, best))
}

/// Pairs that no BMES segmentation can produce.
pub fn invalid_pairs() -> Vec<(usize, usize)> {
    use Label::*;
    let (b, m, e, s) = (B.index(), M.index(), E.index(), S.index());
    vec![
        (b, b),
        (b, s),
        (m, b),
        (m, s),
        (e, m),
        (e, e),
        (s, m),
        (s, e),
        (START, m),
        (START, e),
        (m, END),
        (b, END),
    ]
}

/// Copy of `base` with every scheme-invalid transition set to `-inf`.
pub fn constrained_transitions<T: Scalar>(base: &Transitions<T>) -> Transitions<T> {
    let mut scores = base.scores.clone();
    for (from, to) in invalid_pairs() {
        scores.set(from, to, T::neg_infinity());
    }
    Transitions { scores }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_paths(n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..NUM_LABELS).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    fn em(rows: &[[f64; 4]]) -> Matrix<f64> {
        Matrix::from_rows(rows)
    }

    #[test]
    fn uniform_partition() {
        let t = Transitions::<f64>::zeros();
        for n in 1..6 {
            let e = Matrix::zeros(n, 4);
            let z = log_partition(&e, &t).unwrap();
            assert!((z - n as f64 * 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_position_partition() {
        let t = Transitions::<f64>::zeros();
        let e = em(&[[0.3, -1.0, 2.0, 0.5]]);
        let expect = (0.3f64.exp() + (-1f64).exp() + 2f64.exp() + 0.5f64.exp()).ln();
        assert!((log_partition(&e, &t).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_rejected() {
        let t = Transitions::<f64>::zeros();
        assert!(log_partition(&Matrix::zeros(0, 4), &t).is_err());
        assert!(viterbi(&Matrix::zeros(0, 4), &t).is_err());
    }

    #[test]
    fn single_position_score_includes_boundaries() {
        let mut m = Matrix::zeros(NUM_STATES, NUM_STATES);
        m.set(START, 2, 0.7);
        m.set(2, END, -0.2);
        let t = Transitions::from_matrix(m).unwrap();
        let e = em(&[[0.0, 0.0, 1.5, 0.0]]);
        let s = sequence_score(&e, &t, &[2]).unwrap();
        assert!((s - (1.5 + 0.7 - 0.2)).abs() < 1e-12);
        assert!(sequence_score(&e, &t, &[4]).is_err());
        assert!(sequence_score(&e, &t, &[0, 1]).is_err());
    }

    #[test]
    fn dominant_gold_has_near_zero_nll() {
        let t = Transitions::<f64>::zeros();
        let gold = [0usize, 1, 2, 3];
        let e = Matrix::from_fn(4, 4, |i, y| if y == gold[i] { 100.0 } else { 0.0 });
        let loss = nll(&e, &t, &gold).unwrap();
        assert!(loss >= 0.0 && loss < 1e-6, "{loss}");
    }

    #[test]
    fn viterbi_decouples_without_transitions() {
        let t = Transitions::<f64>::zeros();
        let e = em(&[[0.1, 0.9, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0], [3.0, 0.0, 0.0, 0.0]]);
        let (path, score) = viterbi(&e, &t).unwrap();
        assert_eq!(path, vec![1, 3, 0]);
        assert!((score - 5.9).abs() < 1e-12);
    }

    #[test]
    fn viterbi_ties_pick_lowest_label() {
        let t = Transitions::<f64>::zeros();
        let (path, _) = viterbi(&Matrix::zeros(3, 4), &t).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
    }

    #[test]
    fn marginals_match_enumeration() {
        let mut s = 17u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let n = 4;
        let e = Matrix::from_fn(n, 4, |_, _| rnd());
        let t = Transitions::from_matrix(Matrix::from_fn(6, 6, |_, _| rnd())).unwrap();
        let gold = vec![3, 0, 2, 3];
        let (_, d_em, _) = nll_with_grad(&e, &t, &gold).unwrap();
        let log_z = log_partition(&e, &t).unwrap();
        let mut marg = Matrix::<f64>::zeros(n, 4);
        for p in all_paths(n) {
            let w = (sequence_score(&e, &t, &p).unwrap() - log_z).exp();
            for (i, &y) in p.iter().enumerate() {
                marg.set(i, y, marg.get(i, y) + w);
            }
        }
        for i in 0..n {
            marg.set(i, gold[i], marg.get(i, gold[i]) - 1.0);
        }
        assert!(d_em.max_abs_diff(&marg) < 1e-12);
    }

    #[test]
    fn constraint_table_is_exact() {
        let base = Transitions::from_matrix(Matrix::filled(6, 6, 0.5)).unwrap();
        let c = constrained_transitions(&base);
        let invalid = invalid_pairs();
        for from in 0..NUM_STATES {
            for to in 0..NUM_STATES {
                let v = c.score(from, to);
                if to == START || from == END || invalid.contains(&(from, to)) {
                    assert_eq!(v, f64::NEG_INFINITY, "({from},{to})");
                } else {
                    assert_eq!(v, 0.5, "({from},{to})");
                }
            }
        }
    }

    #[test]
    fn constrained_viterbi_emits_valid_sequences() {
        let mut s = 5u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0
        };
        let invalid = invalid_pairs();
        for n in 1..8 {
            let e = Matrix::from_fn(n, 4, |_, _| rnd());
            let t = constrained_transitions(&Transitions::from_matrix(Matrix::from_fn(6, 6, |_, _| rnd())).unwrap());
            let (path, _) = viterbi(&e, &t).unwrap();
            let mut prev = START;
            for &y in &path {
                assert!(!invalid.contains(&(prev, y)));
                prev = y;
            }
            assert!(!invalid.contains(&(prev, END)));
        }
    }

    #[test]
    fn large_emissions_stay_finite() {
        let t = Transitions::<f64>::zeros();
        let e = Matrix::from_fn(5, 4, |i, y| if (i + y) % 2 == 0 { 1e4 } else { -1e4 });
        assert!(log_partition(&e, &t).unwrap().is_finite());
    }
}
