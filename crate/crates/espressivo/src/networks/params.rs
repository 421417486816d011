//! Flat parameter storage.
//!
//! Every learnable tensor lives in one `Vec<F>`; layers hold [`ParamId`]s
//! and view their slice on demand. One flat vector makes the optimizer,
//! checkpointing, and finite-difference checks trivial and keeps update
//! order deterministic.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

/// Handle to one named tensor inside a [`ParamLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Shape of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamShape {
    Matrix(usize, usize),
    Vector(usize),
}

impl ParamShape {
    pub fn len(&self) -> usize {
        match *self {
            ParamShape::Matrix(r, c) => r * c,
            ParamShape::Vector(n) => n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: ParamShape,
}

/// Registry mapping tensor names to offsets in the flat vector.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, shape: ParamShape) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name,
            offset: self.total,
            shape,
        });
        self.total += shape.len();
        id
    }

    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.push(name.into(), ParamShape::Matrix(rows, cols))
    }

    pub fn vector(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.push(name.into(), ParamShape::Vector(len))
    }

    /// Total number of scalars across all tensors.
    pub fn num_params(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let e = &self.entries[id.0];
        e.offset..e.offset + e.shape.len()
    }

    /// 2-D view of a matrix parameter.
    pub fn m<'a, F>(&self, data: &'a [F], id: ParamId) -> ArrayView2<'a, F> {
        let e = &self.entries[id.0];
        match e.shape {
            ParamShape::Matrix(r, c) => {
                ArrayView2::from_shape((r, c), &data[self.range(id)]).expect("layout shape")
            }
            ParamShape::Vector(_) => panic!("parameter `{}` is not a matrix", e.name),
        }
    }

    /// 1-D view of a vector parameter.
    pub fn v<'a, F>(&self, data: &'a [F], id: ParamId) -> ArrayView1<'a, F> {
        let e = &self.entries[id.0];
        match e.shape {
            ParamShape::Vector(n) => {
                ArrayView1::from_shape(n, &data[self.range(id)]).expect("layout shape")
            }
            ParamShape::Matrix(..) => panic!("parameter `{}` is not a vector", e.name),
        }
    }

    pub fn m_mut<'a, F>(&self, data: &'a mut [F], id: ParamId) -> ArrayViewMut2<'a, F> {
        let e = &self.entries[id.0];
        match e.shape {
            ParamShape::Matrix(r, c) => {
                ArrayViewMut2::from_shape((r, c), &mut data[self.range(id)]).expect("layout shape")
            }
            ParamShape::Vector(_) => panic!("parameter `{}` is not a matrix", e.name),
        }
    }

    pub fn v_mut<'a, F>(&self, data: &'a mut [F], id: ParamId) -> ArrayViewMut1<'a, F> {
        let e = &self.entries[id.0];
        match e.shape {
            ParamShape::Vector(n) => {
                ArrayViewMut1::from_shape(n, &mut data[self.range(id)]).expect("layout shape")
            }
            ParamShape::Matrix(..) => panic!("parameter `{}` is not a vector", e.name),
        }
    }

    /// Raw slice of one tensor (for checkpoint I/O).
    pub fn slice<'a, F>(&self, data: &'a [F], id: ParamId) -> &'a [F] {
        &data[self.range(id)]
    }

    pub fn slice_mut<'a, F>(&self, data: &'a mut [F], id: ParamId) -> &'a mut [F] {
        let r = self.range(id);
        &mut data[r]
    }

    /// All ids in declaration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }
}
