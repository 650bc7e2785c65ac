//! ComplEx scoring and the margin hinge used by both training stages.

use crate::error::{FiltError, Result};

/// Real and imaginary halves of an embedding. Borrowed, never copied.
#[derive(Clone, Copy, Debug)]
pub struct ComplexView<'a> {
    pub real: &'a [f64],
    pub imag: &'a [f64],
}

impl<'a> ComplexView<'a> {
    pub fn new(v: &'a [f64]) -> Result<Self> {
        if v.is_empty() || v.len() % 2 != 0 {
            return Err(FiltError::Shape {
                op: "complex_view",
                detail: format!("length {} is not a positive even number", v.len()),
            });
        }
        let (real, imag) = v.split_at(v.len() / 2);
        Ok(Self { real, imag })
    }
}

/// `Re(sum_k s_k * r_k * conj(o_k))`.
pub fn complex_score(s: &[f64], r: &[f64], o: &[f64]) -> Result<f64> {
    if s.len() != r.len() || s.len() != o.len() {
        return Err(FiltError::Shape {
            op: "complex_score",
            detail: format!("lengths {}, {}, {}", s.len(), r.len(), o.len()),
        });
    }
    let (s, r, o) = (ComplexView::new(s)?, ComplexView::new(r)?, ComplexView::new(o)?);
    let mut acc = 0.0;
    for k in 0..s.real.len() {
        let (sr, si, rr, ri, or, oi) = (s.real[k], s.imag[k], r.real[k], r.imag[k], o.real[k], o.imag[k]);
        acc += sr * rr * or - si * ri * or + sr * ri * oi + si * rr * oi;
    }
    Ok(acc)
}

/// Partial derivatives of [`complex_score`] with respect to `s`, `r`, `o`.
/// Callers guarantee equal even lengths.
pub fn complex_score_grads(s: &[f64], r: &[f64], o: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = s.len() / 2;
    let (mut gs, mut gr, mut go) = (vec![0.0; s.len()], vec![0.0; s.len()], vec![0.0; s.len()]);
    for k in 0..h {
        let (sr, si, rr, ri, or, oi) = (s[k], s[h + k], r[k], r[h + k], o[k], o[h + k]);
        gs[k] = rr * or + ri * oi;
        gs[h + k] = rr * oi - ri * or;
        gr[k] = sr * or + si * oi;
        gr[h + k] = sr * oi - si * or;
        go[k] = sr * rr - si * ri;
        go[h + k] = sr * ri + si * rr;
    }
    (gs, gr, go)
}

/// One hinge term `max(margin - pos + neg, 0)`.
pub fn hinge(pos: f64, neg: f64, margin: f64) -> f64 {
    (margin - pos + neg).max(0.0)
}

/// Sum of hinge terms over `(positive score, negative scores)` groups.
pub fn hinge_loss<'a>(groups: impl IntoIterator<Item = (f64, &'a [f64])>, margin: f64) -> f64 {
    groups
        .into_iter()
        .map(|(p, negs)| negs.iter().map(|&n| hinge(p, n, margin)).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_real_scores_one() {
        assert_eq!(complex_score(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn zero_subject_scores_zero() {
        assert_eq!(complex_score(&[0.0, 0.0], &[3.0, 1.0], &[2.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_and_odd_length() {
        assert!(complex_score(&[1.0, 0.0], &[1.0], &[1.0, 0.0]).is_err());
        assert!(complex_score(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert!((hinge(0.2, 0.5, 1.0) - 1.3).abs() < 1e-15);
        assert_eq!(hinge(0.7, 0.7, 1.0), 1.0);
        assert_eq!(hinge(3.0, 1.0, 1.0), 0.0);
        assert_eq!(hinge_loss([(0.0, &[0.0, 0.0][..])], 1.0), 2.0);
    }
}
