//! Orthonormal fast Walsh-Hadamard transform (natural/Hadamard ordering).
//!
//! With `H_0 = 1` and `H_m = 1/sqrt(2) * [[H_{m-1}, H_{m-1}], [H_{m-1}, -H_{m-1}]]`
//! the transform is symmetric and orthogonal, so it is its own inverse.

use crate::error::{Error, Result};

/// Which side of the transform a block's values live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Parameter,
    Transform,
}

impl Domain {
    pub fn flipped(self) -> Self {
        match self {
            Domain::Parameter => Domain::Transform,
            Domain::Transform => Domain::Parameter,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffBlock {
    pub values: Vec<f64>,
    pub domain: Domain,
}

impl CoeffBlock {
    pub fn parameters(values: Vec<f64>) -> Self {
        Self {
            values,
            domain: Domain::Parameter,
        }
    }

    pub fn coefficients(values: Vec<f64>) -> Self {
        Self {
            values,
            domain: Domain::Transform,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// In-place butterfly with a single `1/sqrt(n)` scale at the end.
pub fn fwht_in_place(data: &mut [f64]) -> Result<()> {
    let n = data.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for chunk in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    if n > 1 {
        let scale = 1.0 / (n as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(())
}

/// Transforms a block and toggles its domain. Applying it twice returns the
/// input up to rounding.
pub fn fwht(block: &CoeffBlock) -> Result<CoeffBlock> {
    if let Some(bad) = block.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {bad} in block")));
    }
    let mut values = block.values.clone();
    fwht_in_place(&mut values)?;
    Ok(CoeffBlock {
        values,
        domain: block.domain.flipped(),
    })
}

pub const NAIVE_MAX_LEN: usize = 4096;

/// `H_m` built by the recursive definition. Test oracle; O(n^2) memory.
pub fn hadamard_matrix(n: usize) -> Result<Vec<Vec<f64>>> {
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    if n > NAIVE_MAX_LEN {
        return Err(Error::InvalidArgument(format!(
            "naive transform limited to {NAIVE_MAX_LEN} elements, got {n}"
        )));
    }
    let mut h = vec![vec![1.0f64]];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                let v = s * h[i][j];
                next[i][j] = v;
                next[i][j + m] = v;
                next[i + m][j] = v;
                next[i + m][j + m] = -v;
            }
        }
        h = next;
    }
    Ok(h)
}

/// Direct matrix-vector realization of the transform.
pub fn naive_wht(block: &CoeffBlock) -> Result<CoeffBlock> {
    let h = hadamard_matrix(block.len())?;
    let values = h
        .iter()
        .map(|row| row.iter().zip(&block.values).map(|(a, b)| a * b).sum())
        .collect();
    Ok(CoeffBlock {
        values,
        domain: block.domain.flipped(),
    })
}
