//! Flat views over learnable tensors, shared by the optimiser, gradient checks and checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Kernel, Matrix};

/// A fixed, ordered collection of parameter tensors.
///
/// `named_tensors` and `tensors_mut` must list tensors in the same order.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter().copied())
            .collect()
    }
}

pub(crate) fn push_kernel<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, k: &'a Kernel) {
    out.push((name, vec![k.out_ch, k.in_ch, k.width], &k.data));
}

pub(crate) fn push_matrix<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, m: &'a Matrix) {
    out.push((name, vec![m.rows, m.cols], &m.data));
}

pub(crate) fn push_vec<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: String, v: &'a [f64]) {
    out.push((name, vec![v.len()], v));
}

/// Named tensors read back from a checkpoint, consumed while rebuilding parameter structs.
#[derive(Debug, Default, Clone)]
pub struct TensorStore {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl TensorStore {
    pub fn insert(&mut self, name: String, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name} dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::InvalidInput(format!("duplicate tensor {name}")));
        }
        Ok(())
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn remaining(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    fn take(&mut self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let (dims, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))?;
        if dims.len() != rank {
            return Err(Error::Shape(format!(
                "tensor {name} has rank {}, expected {rank}",
                dims.len()
            )));
        }
        Ok((dims, data))
    }

    pub fn take_kernel(&mut self, name: &str) -> Result<Kernel> {
        let (d, data) = self.take(name, 3)?;
        Kernel::from_vec(d[0], d[1], d[2], data)
    }

    pub fn take_matrix(&mut self, name: &str) -> Result<Matrix> {
        let (d, data) = self.take(name, 2)?;
        Matrix::from_vec(d[0], d[1], data)
    }

    pub fn take_vec(&mut self, name: &str) -> Result<Vec<f64>> {
        Ok(self.take(name, 1)?.1)
    }

    pub fn take_scalar(&mut self, name: &str) -> Result<f64> {
        let v = self.take_vec(name)?;
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::Shape(format!("tensor {name} should hold one value"))),
        }
    }
}
