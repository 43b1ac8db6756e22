use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    Dot,
    Cosine,
    /// Negated Euclidean distance, so larger is more similar.
    #[serde(alias = "l2")]
    NegL2,
}

impl SimilarityKind {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Dot => "dot",
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::NegL2 => "neg_l2",
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(SimilarityKind::Dot),
            "cosine" => Ok(SimilarityKind::Cosine),
            "neg_l2" | "l2" => Ok(SimilarityKind::NegL2),
            other => Err(Error::invalid(format!("unknown similarity {other:?}"))),
        }
    }
}

fn check_dims<T>(q: &[T], p: &[T]) -> Result<()> {
    if q.len() != p.len() {
        return Err(Error::invalid(format!(
            "similarity dimension mismatch: {} vs {}",
            q.len(),
            p.len()
        )));
    }
    Ok(())
}

pub fn similarity<T: Scalar>(kind: SimilarityKind, q: &[T], p: &[T]) -> Result<T> {
    check_dims(q, p)?;
    match kind {
        SimilarityKind::Dot => Ok(dot(q, p)),
        SimilarityKind::Cosine => {
            let (nq, np) = (norm(q), norm(p));
            if nq == T::zero() || np == T::zero() {
                return Err(Error::invalid("cosine similarity of a zero vector"));
            }
            Ok(dot(q, p) / (nq * np))
        }
        SimilarityKind::NegL2 => {
            let sq: T = q.iter().zip(p).map(|(&a, &b)| (a - b) * (a - b)).sum();
            Ok(-sq.sqrt())
        }
    }
}

/// Similarity with its partial derivatives `(s, ∂s/∂q, ∂s/∂p)`.
///
/// For `NegL2` at `q == p` the subgradient 0 is returned.
pub fn similarity_with_grad<T: Scalar>(
    kind: SimilarityKind,
    q: &[T],
    p: &[T],
) -> Result<(T, Vec<T>, Vec<T>)> {
    check_dims(q, p)?;
    match kind {
        SimilarityKind::Dot => Ok((dot(q, p), p.to_vec(), q.to_vec())),
        SimilarityKind::Cosine => {
            let (nq, np) = (norm(q), norm(p));
            if nq == T::zero() || np == T::zero() {
                return Err(Error::invalid("cosine similarity of a zero vector"));
            }
            let s = dot(q, p) / (nq * np);
            let inv = T::one() / (nq * np);
            let gq = q
                .iter()
                .zip(p)
                .map(|(&qi, &pi)| pi * inv - s * qi / (nq * nq))
                .collect();
            let gp = q
                .iter()
                .zip(p)
                .map(|(&qi, &pi)| qi * inv - s * pi / (np * np))
                .collect();
            Ok((s, gq, gp))
        }
        SimilarityKind::NegL2 => {
            let diff: Vec<T> = q.iter().zip(p).map(|(&a, &b)| a - b).collect();
            let dist = norm(&diff);
            if dist == T::zero() {
                let z = vec![T::zero(); q.len()];
                return Ok((T::zero(), z.clone(), z));
            }
            let gq: Vec<T> = diff.iter().map(|&d| -d / dist).collect();
            let gp = gq.iter().map(|&g| -g).collect();
            Ok((-dist, gq, gp))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(similarity(SimilarityKind::Dot, &[1.0f64, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let v = [0.3f64, -1.2, 2.0];
        assert!((similarity(SimilarityKind::Cosine, &v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(similarity(SimilarityKind::NegL2, &v, &v).unwrap(), 0.0);
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        assert!(similarity(SimilarityKind::Cosine, &[0.0f64, 0.0], &[1.0, 0.0]).is_err());
        assert!(similarity_with_grad(SimilarityKind::Cosine, &[1.0f64, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(similarity(SimilarityKind::Dot, &[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let q = [0.4f64, -0.7, 1.1];
        let p = [-0.2f64, 0.9, 0.5];
        let h = 1e-6;
        for kind in [SimilarityKind::Dot, SimilarityKind::Cosine, SimilarityKind::NegL2] {
            let (_, gq, gp) = similarity_with_grad(kind, &q, &p).unwrap();
            for i in 0..3 {
                let (mut a, mut b) = (q, q);
                a[i] += h;
                b[i] -= h;
                let fd = (similarity(kind, &a, &p).unwrap() - similarity(kind, &b, &p).unwrap()) / (2.0 * h);
                assert!((fd - gq[i]).abs() < 1e-8, "{kind:?} dq[{i}]");
                let (mut a, mut b) = (p, p);
                a[i] += h;
                b[i] -= h;
                let fd = (similarity(kind, &q, &a).unwrap() - similarity(kind, &q, &b).unwrap()) / (2.0 * h);
                assert!((fd - gp[i]).abs() < 1e-8, "{kind:?} dp[{i}]");
            }
        }
    }
}
