//! Named parameter tensors packed into one flat buffer.

use std::ops::Range;

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered tensor specs; tensor `i` occupies `specs[i].range()` of the buffer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let spec = ParamSpec {
            name: name.into(),
            shape,
            offset: self.total,
        };
        let r = spec.range();
        self.total = r.end;
        self.specs.push(spec);
        r
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Name of the tensor holding flat index `i`.
    pub fn name_of(&self, i: usize) -> &str {
        let k = self.specs.partition_point(|s| s.offset + s.len() <= i);
        &self.specs[k].name
    }
}

/// Rounds every value to the nearest f32 so checkpoints store it exactly.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

/// Uniform He initialization in `±sqrt(6 / fan_in)`.
pub fn he_uniform<R: Rng + ?Sized>(values: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in values {
        *v = rng.gen_range(-bound..bound);
    }
}
