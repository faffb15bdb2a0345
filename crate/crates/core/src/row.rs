use serde::{Deserialize, Serialize};

use crate::tag::Tag;

/// A vector of matrix elements sharing one tag.
///
/// Elements are held sign-extended in `i32` regardless of the bank they
/// live in; 8-bit banks simply never hold values outside `i8` range.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedRow {
    pub elems: Vec<i32>,
    pub tag: Tag,
}

impl TaggedRow {
    pub fn new(elems: Vec<i32>, tag: Tag) -> Self {
        Self { elems, tag }
    }

    pub fn zeroed(width: usize) -> Self {
        Self {
            elems: vec![0; width],
            tag: Tag::PUBLIC,
        }
    }

    pub fn width(&self) -> usize {
        self.elems.len()
    }
}

/// Element storage width of a bank or DMA transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemWidth {
    /// Signed 8-bit input elements.
    I8,
    /// Signed 32-bit accumulator elements.
    I32,
}

impl ElemWidth {
    pub const fn bits(self) -> usize {
        match self {
            ElemWidth::I8 => 8,
            ElemWidth::I32 => 32,
        }
    }

    pub const fn per_word(self) -> usize {
        64 / self.bits()
    }

    /// Words occupied by `elems` elements, the last word zero-padded.
    pub const fn words_for(self, elems: usize) -> usize {
        elems.div_ceil(self.per_word())
    }

    /// Reinterpret the low bits of `value` as a signed element.
    pub fn truncate(self, value: i32) -> i32 {
        match self {
            ElemWidth::I8 => value as i8 as i32,
            ElemWidth::I32 => value,
        }
    }

    /// Clamp into the representable range.
    pub fn saturate(self, value: i32) -> i32 {
        match self {
            ElemWidth::I8 => value.clamp(i8::MIN as i32, i8::MAX as i32),
            ElemWidth::I32 => value,
        }
    }
}
