//! Small dense helpers over plain slices.

use nalgebra::{DMatrix, DVector};

use crate::error::{FirmError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Direct LU solve of `A x = b` with `A` given row-major.
pub fn solve(a: &[Vec<f64>], b: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let n = b.len();
    let mat = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let rhs = DVector::from_column_slice(b);
    let x = mat.lu().solve(&rhs).ok_or(FirmError::Singular(what))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FirmError::Singular(what));
    }
    Ok(x.iter().copied().collect())
}

/// Elementwise mean of equally sized vectors, accumulated as offsets from
/// the first input so that identical inputs average to themselves exactly.
/// A single input is returned unchanged.
pub fn mean_of<'a, I>(vectors: I) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next()?;
    let mut offset = vec![0.0; first.len()];
    let mut count = 1usize;
    for v in iter {
        offset
            .iter_mut()
            .zip(v.iter().zip(first))
            .for_each(|(o, (x, f))| *o += x - f);
        count += 1;
    }
    let c = count as f64;
    Some(
        first
            .iter()
            .zip(&offset)
            .map(|(f, o)| if count > 1 { f + o / c } else { *f })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_identical_vectors_is_exact() {
        let v = [0.1, 1.0 / 3.0, 0.7];
        for n in 1..12 {
            let copies = vec![&v[..]; n];
            assert_eq!(mean_of(copies).unwrap(), v.to_vec());
        }
        assert_eq!(mean_of([&[1.0, 1.0][..], &[3.0, 3.0][..]]).unwrap(), vec![2.0, 2.0]);
        assert!(mean_of(std::iter::empty::<&[f64]>()).is_none());
    }

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[3.0, 5.0], "test").unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[1.0, 2.0], "test").is_err());
    }

    #[test]
    fn mean_of_single_is_identity() {
        let v = [0.1, -0.0, 3.3];
        assert_eq!(mean_of([&v[..]]).unwrap(), v.to_vec());
        assert_eq!(
            mean_of([&[1.0, 1.0][..], &[3.0, 3.0][..]]).unwrap(),
            vec![2.0, 2.0]
        );
    }
}
