use nalgebra::DMatrix;

use super::{HaarPlan, WaveletPyramid};
use crate::error::{Error, Result};

/// Largest grid (in entries) for which dense matrices are built.
pub const MATRIX_SIZE_CAP: usize = 4096;

/// Dense matrices of the unnormalized transforms, built column by column from
/// unit impulses. Used as a test oracle.
#[derive(Clone, Debug)]
pub struct TransformMatrices {
    pub m_fwt: DMatrix<f64>,
    pub m_iwt: DMatrix<f64>,
    /// `r[i] = 1 / |row i of m_fwt|`.
    pub r: Vec<f64>,
}

impl TransformMatrices {
    pub fn build(shape: &[usize]) -> Result<Self> {
        let plan = HaarPlan::new(shape)?;
        let n = plan.len();
        if n > MATRIX_SIZE_CAP {
            return Err(Error::InvalidArgument(format!(
                "{n} entries exceeds the dense matrix cap of {MATRIX_SIZE_CAP}"
            )));
        }
        let mut m_fwt = DMatrix::zeros(n, n);
        let mut m_iwt = DMatrix::zeros(n, n);
        let mut impulse = vec![0.0; n];
        let mut out = vec![0.0; n];
        for j in 0..n {
            impulse[j] = 1.0;
            plan.forward_into(&impulse, 0.0, &mut out)?;
            m_fwt.column_mut(j).copy_from_slice(&out);
            let pyramid = WaveletPyramid {
                coeffs: impulse.clone(),
                axis_scales: plan.axis_scales().to_vec(),
                rho: 0.0,
                source_shape: shape.to_vec(),
            };
            m_iwt.column_mut(j).copy_from_slice(&plan.inverse(&pyramid)?);
            impulse[j] = 0.0;
        }
        let r = m_fwt.row_iter().map(|row| 1.0 / row.norm()).collect();
        Ok(Self { m_fwt, m_iwt, r })
    }

    /// `diag(r) * m_fwt`.
    pub fn normalized_fwt(&self) -> DMatrix<f64> {
        let mut m = self.m_fwt.clone();
        for (i, mut row) in m.row_iter_mut().enumerate() {
            row *= self.r[i];
        }
        m
    }

    /// `m_iwt * diag(1 / r)`.
    pub fn normalized_iwt(&self) -> DMatrix<f64> {
        let mut m = self.m_iwt.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col /= self.r[j];
        }
        m
    }
}
