//! Data tensor prepared for core-wise solves: cyclic unfoldings of the data
//! and of the mask, plus the reference norm.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::model::TcModel;
use crate::tensor::{cyclic_unfolding, DenseTensor, MaskTensor};

pub(crate) struct Target<'a> {
    pub unfoldings: Vec<DMatrix<f64>>,
    pub weights: Option<Vec<DMatrix<f64>>>,
    pub norm: f64,
    pub y: &'a DenseTensor,
    pub mask: Option<&'a MaskTensor>,
}

impl<'a> Target<'a> {
    pub fn new(y: &'a DenseTensor, mask: Option<&'a MaskTensor>) -> Result<Self> {
        let order = y.order();
        if let Some(w) = mask {
            if w.dims() != y.dims() {
                return invalid("mask dims must match the data");
            }
            if w.observed_count() == 0 {
                return invalid("mask has no observed entries");
            }
        }
        let unfoldings = (0..order)
            .map(|n| cyclic_unfolding(y, n))
            .collect::<Result<Vec<_>>>()?;
        let weights = mask
            .map(|w| {
                let t = w.to_tensor();
                (0..order).map(|n| cyclic_unfolding(&t, n)).collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let norm = match mask {
            None => y.frobenius_norm(),
            Some(w) => y
                .data()
                .iter()
                .zip(w.data())
                .filter(|(_, &o)| o)
                .map(|(v, _)| v * v)
                .sum::<f64>()
                .sqrt(),
        };
        if !(norm > 0.0) {
            return invalid("data has zero norm on the observed entries");
        }
        Ok(Self { unfoldings, weights, norm, y, mask })
    }

    /// Absolute error on the observed entries.
    pub fn error(&self, m: &TcModel) -> f64 {
        let yhat = m.reconstruct();
        let mut acc = 0.0;
        match self.mask {
            None => {
                for (a, b) in self.y.data().iter().zip(yhat.data()) {
                    acc += (a - b) * (a - b);
                }
            }
            Some(w) => {
                for ((a, b), &o) in self.y.data().iter().zip(yhat.data()).zip(w.data()) {
                    if o {
                        acc += (a - b) * (a - b);
                    }
                }
            }
        }
        acc.sqrt()
    }
}

