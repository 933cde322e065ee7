//! Spectral decompositions and mixed real/complex products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::Complex64;

const EIGEN_EPS: f64 = 1e-15;

/// Eigenpairs of a real symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct RealSpectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl RealSpectrum {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        check_square(m.nrows(), m.ncols())?;
        let scale = max_abs(m).max(1.0);
        let asym = m
            .iter()
            .zip(m.transpose().iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if asym > 1e-12 * scale {
            return Err(Error::Contract(format!(
                "matrix is not symmetric (defect {asym:e})"
            )));
        }
        let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, 0).ok_or_else(|| {
            Error::Numeric(format!(
                "symmetric eigensolver did not converge (dim {}, max |entry| {scale:e})",
                m.nrows()
            ))
        })?;
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "eigensolver produced non-finite values".into(),
            ));
        }
        let (values, vectors) = sort_pairs(eig.eigenvalues, eig.eigenvectors);
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_complex(&self) -> HermitianSpectrum {
        HermitianSpectrum {
            values: self.values.clone(),
            vectors: self.vectors.map(|v| Complex64::new(v, 0.0)),
        }
    }
}

/// Eigenpairs of a complex Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianSpectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl HermitianSpectrum {
    pub fn new(m: &DMatrix<Complex64>) -> Result<Self> {
        check_square(m.nrows(), m.ncols())?;
        let herm = m
            .iter()
            .zip(m.adjoint().iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).norm()));
        let scale = m.iter().fold(1.0f64, |a, c| a.max(c.norm()));
        if herm > 1e-12 * scale {
            return Err(Error::Contract(format!(
                "matrix is not Hermitian (defect {herm:e})"
            )));
        }
        let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, 0).ok_or_else(|| {
            Error::Numeric(format!(
                "Hermitian eigensolver did not converge (dim {})",
                m.nrows()
            ))
        })?;
        let (values, vectors) = sort_pairs(eig.eigenvalues, eig.eigenvectors);
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_square(r: usize, c: usize) -> Result<()> {
    if r != c || r == 0 {
        return Err(Error::Contract(format!(
            "expected a non-empty square matrix, got {r}x{c}"
        )));
    }
    Ok(())
}

fn sort_pairs<T: nalgebra::Scalar + Copy>(
    values: DVector<f64>,
    vectors: DMatrix<T>,
) -> (DVector<f64>, DMatrix<T>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = DVector::from_iterator(values.len(), order.iter().map(|&k| values[k]));
    let sorted_vectors = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| {
        vectors[(r, order[c])]
    });
    (sorted_values, sorted_vectors)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn max_abs_c(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

/// `a† b` for complex `a` and real `b`, using real matrix products.
pub fn adjoint_mul_real(a: &DMatrix<Complex64>, b: &DMatrix<f64>) -> DMatrix<Complex64> {
    let re = a.map(|c| c.re);
    let im = a.map(|c| c.im);
    let pr = re.tr_mul(b);
    let pi = im.tr_mul(b);
    DMatrix::from_fn(pr.nrows(), pr.ncols(), |r, c| {
        Complex64::new(pr[(r, c)], -pi[(r, c)])
    })
}

/// `a v` for real `a` and complex `v`.
pub fn real_mul_complex(a: &DMatrix<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let re = a * v.map(|c| c.re);
    let im = a * v.map(|c| c.im);
    DVector::from_fn(v.len(), |k, _| Complex64::new(re[k], im[k]))
}

/// `aᵀ v` for real `a` and complex `v`.
pub fn real_tr_mul_complex(a: &DMatrix<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let re = a.tr_mul(&v.map(|c| c.re));
    let im = a.tr_mul(&v.map(|c| c.im));
    DVector::from_fn(re.len(), |k, _| Complex64::new(re[k], im[k]))
}

/// `aᵀ b` for real `a` and complex `b`.
pub fn real_tr_mul_complex_mat(a: &DMatrix<f64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let re = a.tr_mul(&b.map(|c| c.re));
    let im = a.tr_mul(&b.map(|c| c.im));
    DMatrix::from_fn(re.nrows(), re.ncols(), |r, c| {
        Complex64::new(re[(r, c)], im[(r, c)])
    })
}

/// FNV-1a over the bit patterns of a real matrix.
pub fn fingerprint(m: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&(m.nrows() as u64).to_le_bytes());
    for v in m.iter() {
        eat(&v.to_bits().to_le_bytes());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_real_spectrum_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, -1.0, 0.5, 0.0, 0.5, 3.0]);
        let s = RealSpectrum::new(&m).unwrap();
        assert!(s.values[0] <= s.values[1] && s.values[1] <= s.values[2]);
        let rec = &s.vectors * DMatrix::from_diagonal(&s.values) * s.vectors.transpose();
        assert!(max_abs(&(rec - m)) < 1e-13);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(RealSpectrum::new(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn mixed_products_match_complex() {
        let a = DMatrix::from_fn(3, 3, |r, c| {
            Complex64::new(r as f64 - c as f64, (r * c) as f64)
        });
        let b = DMatrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64 * 0.5);
        let bc = b.map(|v| Complex64::new(v, 0.0));
        assert!(max_abs_c(&(adjoint_mul_real(&a, &b) - a.adjoint() * &bc)) < 1e-14);
        assert!(max_abs_c(&(real_tr_mul_complex_mat(&b, &a) - bc.transpose() * &a)) < 1e-14);
    }

    #[test]
    fn fingerprint_distinguishes() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let mut b = a.clone();
        b[(0, 1)] = 1.0 + f64::EPSILON;
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
    }
}
