//! Layouts of feature vectors made of several copies of group representations.

use crate::group::{Element, Representation};

use super::SymmetrizerError;

/// `multiplicity` copies of `rep`, stored in blocks of `inner` consecutive
/// components.
///
/// Component `a` of copy `c` lives at `((a / inner)·multiplicity + c)·inner + a % inner`
/// relative to the field offset. With `inner = 1` and a regular representation
/// this is the group-major layout `g·D + d`; with `inner = rep.dim()` every
/// copy is contiguous.
#[derive(Clone, Debug)]
pub struct Field {
    pub rep: Representation,
    pub multiplicity: usize,
    pub inner: usize,
}

impl Field {
    /// Group-major layout: all copies of component 0 first, then component 1, ...
    pub fn interleaved(rep: Representation, multiplicity: usize) -> Self {
        Self {
            rep,
            multiplicity,
            inner: 1,
        }
    }

    /// Copy-major layout: each copy occupies `rep.dim()` consecutive slots.
    pub fn contiguous(rep: Representation, multiplicity: usize) -> Self {
        let inner = rep.dim().max(1);
        Self {
            rep,
            multiplicity,
            inner,
        }
    }

    pub fn dim(&self) -> usize {
        self.rep.dim() * self.multiplicity
    }

    /// Offset of component `a` of copy `c`, relative to the start of the field.
    #[inline]
    pub fn index(&self, copy: usize, a: usize) -> usize {
        ((a / self.inner) * self.multiplicity + copy) * self.inner + a % self.inner
    }
}

/// An ordered direct sum of fields describing a flat feature vector.
#[derive(Clone, Debug)]
pub struct FieldType {
    fields: Vec<Field>,
    offsets: Vec<usize>,
    dim: usize,
}

impl FieldType {
    pub fn new(fields: Vec<Field>) -> Result<Self, SymmetrizerError> {
        if let Some(first) = fields.first() {
            for f in &fields[1..] {
                if **f.rep.group() != **first.rep.group() {
                    return Err(SymmetrizerError::GroupMismatch);
                }
            }
        }
        for f in &fields {
            if f.inner == 0 || f.rep.dim() % f.inner != 0 {
                return Err(SymmetrizerError::Layout(format!(
                    "block size {} does not divide representation dimension {}",
                    f.inner,
                    f.rep.dim()
                )));
            }
        }
        let mut offsets = Vec::with_capacity(fields.len());
        let mut dim = 0;
        for f in &fields {
            offsets.push(dim);
            dim += f.dim();
        }
        Ok(Self {
            fields,
            offsets,
            dim,
        })
    }

    pub fn single(field: Field) -> Self {
        Self::new(vec![field]).expect("a single field is always consistent")
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn offset(&self, field: usize) -> usize {
        self.offsets[field]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Absolute position of component `a` of copy `copy` of field `field`.
    #[inline]
    pub fn index(&self, field: usize, copy: usize, a: usize) -> usize {
        self.offsets[field] + self.fields[field].index(copy, a)
    }

    /// Applies the direct-sum action of `g` to a vector laid out by this type.
    pub fn transform(&self, g: Element, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector does not match field type");
        let mut out = vec![0.0; self.dim];
        for (fi, field) in self.fields.iter().enumerate() {
            let m = field.rep.matrix(g);
            let d = field.rep.dim();
            for c in 0..field.multiplicity {
                for a in 0..d {
                    let mut acc = 0.0;
                    for b in 0..d {
                        let v = m[[a, b]];
                        if v != 0.0 {
                            acc += v * x[self.index(fi, c, b)];
                        }
                    }
                    out[self.index(fi, c, a)] = acc;
                }
            }
        }
        out
    }
}
