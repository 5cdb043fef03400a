use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregation of the embeddings of all annotators attached to one input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
    Sum,
    /// Concatenation, zero-padded to `max_annotators` slots.
    Concat,
}

impl Pooling {
    /// Width of the pooled vector for inputs of width `dim`.
    pub fn output_dim(self, dim: usize, max_annotators: usize) -> usize {
        match self {
            Pooling::Concat => dim * max_annotators,
            _ => dim,
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::Sum => "sum",
            Pooling::Concat => "concat",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "sum" => Ok(Pooling::Sum),
            "concat" => Ok(Pooling::Concat),
            other => Err(Error::Config(format!("unknown pooling strategy {other:?}"))),
        }
    }
}

/// Pools equally sized vectors. `max_annotators` is only consulted for
/// [`Pooling::Concat`].
pub fn pool<V: AsRef<[f64]>>(vectors: &[V], strategy: Pooling, max_annotators: usize) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Config("cannot pool an empty list of vectors".into()))?
        .as_ref();
    let dim = first.len();
    for v in vectors {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.as_ref().len(),
                context: "pooled vectors",
            });
        }
    }
    let out = match strategy {
        Pooling::Sum | Pooling::Mean => {
            let mut acc = vec![0.0; dim];
            for v in vectors {
                acc.iter_mut().zip(v.as_ref()).for_each(|(a, x)| *a += x);
            }
            if strategy == Pooling::Mean {
                let n = vectors.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
            }
            acc
        }
        Pooling::Max => {
            let mut acc = first.to_vec();
            for v in &vectors[1..] {
                acc.iter_mut()
                    .zip(v.as_ref())
                    .for_each(|(a, &x)| *a = a.max(x));
            }
            acc
        }
        Pooling::Concat => {
            if vectors.len() > max_annotators {
                return Err(Error::Config(format!(
                    "concat pooling of {} vectors exceeds the configured maximum of {max_annotators}",
                    vectors.len()
                )));
            }
            let mut acc = vec![0.0; dim * max_annotators];
            for (slot, v) in vectors.iter().enumerate() {
                acc[slot * dim..(slot + 1) * dim].copy_from_slice(v.as_ref());
            }
            acc
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elementwise_strategies() {
        let vs = [vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(pool(&vs, Pooling::Mean, 0).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool(&vs, Pooling::Sum, 0).unwrap(), vec![4.0, 6.0]);
        let vs = [vec![1.0, 5.0], vec![4.0, 2.0]];
        assert_eq!(pool(&vs, Pooling::Max, 0).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn single_vector_is_identity() {
        let vs = [vec![0.5, -1.0, 3.0]];
        for s in [Pooling::Mean, Pooling::Max, Pooling::Sum] {
            assert_eq!(pool(&vs, s, 1).unwrap(), vs[0]);
        }
    }

    #[test]
    fn concat_pads_and_limits() {
        let vs = [vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(
            pool(&vs, Pooling::Concat, 3).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]
        );
        assert!(pool(&vs, Pooling::Concat, 1).is_err());
        assert_eq!(Pooling::Concat.output_dim(2, 3), 6);
    }

    #[test]
    fn errors() {
        let empty: [Vec<f64>; 0] = [];
        assert!(pool(&empty, Pooling::Mean, 1).is_err());
        assert!(pool(&[vec![1.0], vec![1.0, 2.0]], Pooling::Mean, 1).is_err());
        assert!("median".parse::<Pooling>().is_err());
        assert_eq!("max".parse::<Pooling>().unwrap(), Pooling::Max);
    }

    proptest! {
        #[test]
        fn order_invariant(
            mut vs in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..6),
            rot in 0usize..6,
        ) {
            let before: Vec<_> = [Pooling::Mean, Pooling::Max, Pooling::Sum]
                .iter()
                .map(|&s| pool(&vs, s, 0).unwrap())
                .collect();
            let n = vs.len();
            vs.rotate_left(rot % n);
            vs.reverse();
            for (i, &s) in [Pooling::Mean, Pooling::Max, Pooling::Sum].iter().enumerate() {
                let after = pool(&vs, s, 0).unwrap();
                for (a, b) in after.iter().zip(&before[i]) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
