//! Flat, named views over model parameters.
//!
//! The optimizer, gradient checker and checkpoint writer all walk parameters
//! through these views, in one fixed order.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Learning-rate group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Image segment encoder (CLS token and its attention blocks).
    Isec,
    /// Transformer classifier stack and the multitask head.
    Classifier,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ParamGroup::Isec => "isec",
            ParamGroup::Classifier => "classifier",
        })
    }
}

#[derive(Debug)]
pub struct ParamRef<'a, F> {
    pub group: ParamGroup,
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [F],
}

#[derive(Debug)]
pub struct ParamMut<'a, F> {
    pub group: ParamGroup,
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a mut [F],
}

pub(crate) struct ParamSink<'a, F> {
    pub items: Vec<ParamRef<'a, F>>,
}

impl<'a, F> ParamSink<'a, F> {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn matrix(&mut self, group: ParamGroup, name: String, m: &'a Array2<F>) {
        self.items.push(ParamRef {
            group,
            name,
            shape: m.shape().to_vec(),
            values: m.as_slice().expect("parameters are stored in standard layout"),
        });
    }

    pub fn vector(&mut self, group: ParamGroup, name: String, v: &'a Array1<F>) {
        self.items.push(ParamRef {
            group,
            name,
            shape: v.shape().to_vec(),
            values: v.as_slice().expect("parameters are stored in standard layout"),
        });
    }
}

pub(crate) struct ParamSinkMut<'a, F> {
    pub items: Vec<ParamMut<'a, F>>,
}

impl<'a, F> ParamSinkMut<'a, F> {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn matrix(&mut self, group: ParamGroup, name: String, m: &'a mut Array2<F>) {
        let shape = m.shape().to_vec();
        self.items.push(ParamMut {
            group,
            name,
            shape,
            values: m.as_slice_mut().expect("parameters are stored in standard layout"),
        });
    }

    pub fn vector(&mut self, group: ParamGroup, name: String, v: &'a mut Array1<F>) {
        let shape = v.shape().to_vec();
        self.items.push(ParamMut {
            group,
            name,
            shape,
            values: v.as_slice_mut().expect("parameters are stored in standard layout"),
        });
    }
}
