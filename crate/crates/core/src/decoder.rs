//! Triplet scoring functions. Higher scores mean more plausible for every scorer.

use std::fmt;

use crate::diff::{ParamKey, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kg::RelationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorerKind {
    /// `-|s + q - o|₁`
    #[default]
    TransE,
    /// `Σ s·q·o`
    DistMult,
    /// `Re(Σ s·q·conj(o))` with the first half of each vector real and the
    /// second half imaginary.
    ComplEx,
}

impl ScorerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "transe" => Some(ScorerKind::TransE),
            "distmult" => Some(ScorerKind::DistMult),
            "complex" => Some(ScorerKind::ComplEx),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::TransE => "transe",
            ScorerKind::DistMult => "distmult",
            ScorerKind::ComplEx => "complex",
        }
    }

    pub fn check_dim(self, dim: usize) -> Result<()> {
        if self == ScorerKind::ComplEx && dim % 2 != 0 {
            return Err(Error::Model(format!(
                "complex scorer needs an even embedding dimension, got {dim}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scores `(s, q, o)` given the relation embedding row for `q`.
pub fn score_vectors(s: &[f64], q: &[f64], o: &[f64], kind: ScorerKind) -> Result<f64> {
    if s.len() != q.len() || q.len() != o.len() {
        return Err(Error::Model(format!(
            "score dimensions differ: {} / {} / {}",
            s.len(),
            q.len(),
            o.len()
        )));
    }
    kind.check_dim(s.len())?;
    Ok(match kind {
        ScorerKind::TransE => -s
            .iter()
            .zip(q)
            .zip(o)
            .map(|((a, b), c)| (a + b - c).abs())
            .sum::<f64>(),
        ScorerKind::DistMult => s.iter().zip(q).zip(o).map(|((a, b), c)| a * b * c).sum(),
        ScorerKind::ComplEx => {
            let h = s.len() / 2;
            let (sr, si) = s.split_at(h);
            let (qr, qi) = q.split_at(h);
            let (or, oi) = o.split_at(h);
            (0..h)
                .map(|k| {
                    sr[k] * qr[k] * or[k] + si[k] * qr[k] * oi[k] + sr[k] * qi[k] * oi[k]
                        - si[k] * qi[k] * or[k]
                })
                .sum()
        }
    })
}

/// Scores output embeddings with the relation embedding of `q` from `W_r`.
pub fn score(s: &[f64], q: RelationId, o: &[f64], params: &ParamStore, kind: ScorerKind) -> Result<f64> {
    let table = params.get(ParamKey::Relation);
    if q.index() >= table.rows {
        return Err(Error::Model(format!("relation {} has no embedding", q.0)));
    }
    score_vectors(s, table.row(q.index()), o, kind)
}

/// Differentiable version of [`score_vectors`].
pub fn score_on_tape(tape: &mut Tape, s: Var, q: Var, o: Var, kind: ScorerKind) -> Result<Var> {
    let d = tape.shape(s).0;
    kind.check_dim(d)?;
    Ok(match kind {
        ScorerKind::TransE => {
            let t = tape.add(s, q)?;
            let diff = tape.sub(t, o)?;
            let l1 = tape.l1_norm(diff);
            tape.neg(l1)
        }
        ScorerKind::DistMult => {
            let sq = tape.mul(s, q)?;
            tape.dot(sq, o)?
        }
        ScorerKind::ComplEx => {
            let h = d / 2;
            let (sr, si) = (tape.slice(s, 0, h)?, tape.slice(s, h, h)?);
            let (qr, qi) = (tape.slice(q, 0, h)?, tape.slice(q, h, h)?);
            let (or, oi) = (tape.slice(o, 0, h)?, tape.slice(o, h, h)?);
            let srqr = tape.mul(sr, qr)?;
            let siqr = tape.mul(si, qr)?;
            let srqi = tape.mul(sr, qi)?;
            let siqi = tape.mul(si, qi)?;
            let a = tape.dot(srqr, or)?;
            let b = tape.dot(siqr, oi)?;
            let c = tape.dot(srqi, oi)?;
            let e = tape.dot(siqi, or)?;
            let ab = tape.add(a, b)?;
            let abc = tape.add(ab, c)?;
            tape.sub(abc, e)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn transe_hand_values() {
        let s = [0.3, -0.2];
        let q = [0.5, 0.1];
        let o = [0.8, -0.1];
        assert_eq!(score_vectors(&s, &q, &o, ScorerKind::TransE).unwrap(), 0.0);
        assert_eq!(
            score_vectors(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], ScorerKind::TransE).unwrap(),
            -2.0
        );
    }

    #[test]
    fn distmult_hand_value() {
        let v = score_vectors(&[1.0, 2.0], &[1.0, 1.0], &[3.0, 4.0], ScorerKind::DistMult).unwrap();
        assert_eq!(v, 11.0);
    }

    #[test]
    fn complex_requires_even_dim() {
        assert!(score_vectors(&[1.0; 3], &[1.0; 3], &[1.0; 3], ScorerKind::ComplEx).is_err());
    }

    #[test]
    fn scorer_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let (s, q, o) = (rv(&mut rng, 6), rv(&mut rng, 6), rv(&mut rng, 6));
            let te = score_vectors(&s, &q, &o, ScorerKind::TransE).unwrap();
            assert!(te < 0.0);
            let dm = score_vectors(&s, &q, &o, ScorerKind::DistMult).unwrap();
            let dm_rev = score_vectors(&o, &q, &s, ScorerKind::DistMult).unwrap();
            assert!((dm - dm_rev).abs() < 1e-12);

            let pad = |v: &[f64]| {
                let mut w = v[..3].to_vec();
                w.extend([0.0; 3]);
                w
            };
            let cx = score_vectors(&pad(&s), &pad(&q), &pad(&o), ScorerKind::ComplEx).unwrap();
            let dm3 = score_vectors(&s[..3], &q[..3], &o[..3], ScorerKind::DistMult).unwrap();
            assert_eq!(cx, dm3);
        }
        let (s, q, o) = ([0.1, 0.2], [0.5, -0.3], [0.4, 0.0]);
        let fwd = score_vectors(&s, &q, &o, ScorerKind::TransE).unwrap();
        let rev = score_vectors(&o, &q, &s, ScorerKind::TransE).unwrap();
        assert_ne!(fwd, rev);
    }

    #[test]
    fn tape_matches_plain_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [ScorerKind::TransE, ScorerKind::DistMult, ScorerKind::ComplEx] {
            let (s, q, o) = (rv(&mut rng, 8), rv(&mut rng, 8), rv(&mut rng, 8));
            let mut t = Tape::new();
            let (vs, vq, vo) = (t.input(s.clone()), t.input(q.clone()), t.input(o.clone()));
            let out = score_on_tape(&mut t, vs, vq, vo, kind).unwrap();
            let plain = score_vectors(&s, &q, &o, kind).unwrap();
            assert!((t.scalar_value(out) - plain).abs() < 1e-12);
        }
    }
}
