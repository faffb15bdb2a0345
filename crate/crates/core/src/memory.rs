//! Word-tagged main memory and the DMA engine's row transfers.
//!
//! Memory carries one tag per 64-bit word; the scratchpad carries one tag
//! per row. Loading a row folds the tags of the words it covers, storing a
//! row replicates the row tag onto every covered word.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::row::{ElemWidth, TaggedRow};
use crate::tag::{MixingFault, Tag, TagPolicy};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedWord {
    pub data: u64,
    pub tag: Tag,
}

impl TaggedWord {
    pub const fn new(data: u64, tag: Tag) -> Self {
        Self { data, tag }
    }

    pub const fn public(data: u64) -> Self {
        Self { data, tag: Tag::PUBLIC }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

/// One DMA burst as seen on the memory bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessEntry {
    pub cycle: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub len: u64,
}

/// Ordered log of memory bursts; cycles never decrease.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessTrace {
    entries: Vec<AccessEntry>,
}

impl AccessTrace {
    pub fn entries(&self) -> &[AccessEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, entry: AccessEntry) {
        if let Some(last) = self.entries.last() {
            assert!(
                entry.cycle >= last.cycle,
                "access trace cycle went backwards: {} after {}",
                entry.cycle,
                last.cycle
            );
        }
        self.entries.push(entry);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
#[error("memory access [{addr}, {addr}+{len}) outside {size} words")]
pub struct OutOfRange {
    pub addr: u64,
    pub len: u64,
    pub size: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum DmaError {
    #[error(transparent)]
    OutOfRange(#[from] OutOfRange),
    #[error(transparent)]
    Mixing(#[from] MixingFault),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TaggedMemory {
    words: Vec<TaggedWord>,
    trace: AccessTrace,
}

impl TaggedMemory {
    /// Zero-filled public memory of `size` words.
    pub fn new(size: usize) -> Self {
        Self {
            words: vec![TaggedWord::default(); size],
            trace: AccessTrace::default(),
        }
    }

    pub fn size(&self) -> u64 {
        self.words.len() as u64
    }

    pub fn words(&self) -> &[TaggedWord] {
        &self.words
    }

    pub fn trace(&self) -> &AccessTrace {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace = AccessTrace::default();
    }

    fn span(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, OutOfRange> {
        let err = OutOfRange {
            addr,
            len,
            size: self.size(),
        };
        let end = addr.checked_add(len).ok_or(err)?;
        if end > self.size() {
            return Err(err);
        }
        Ok(addr as usize..end as usize)
    }

    /// Untraced word access for building images and inspecting results.
    pub fn get(&self, addr: u64) -> Option<TaggedWord> {
        self.words.get(usize::try_from(addr).ok()?).copied()
    }

    /// Untraced word store for building initial images.
    pub fn poke(&mut self, addr: u64, word: TaggedWord) -> Result<(), OutOfRange> {
        let range = self.span(addr, 1)?;
        self.words[range.start] = word;
        Ok(())
    }

    /// Bus read of `len` words; logged as one burst.
    pub fn read(&mut self, addr: u64, len: u64, cycle: u64) -> Result<Vec<TaggedWord>, OutOfRange> {
        let range = self.span(addr, len)?;
        self.trace.push(AccessEntry {
            cycle,
            kind: AccessKind::Read,
            addr,
            len,
        });
        Ok(self.words[range].to_vec())
    }

    /// Bus write of consecutive words; logged as one burst.
    pub fn write(&mut self, addr: u64, data: &[TaggedWord], cycle: u64) -> Result<(), OutOfRange> {
        let range = self.span(addr, data.len() as u64)?;
        self.trace.push(AccessEntry {
            cycle,
            kind: AccessKind::Write,
            addr,
            len: data.len() as u64,
        });
        self.words[range].copy_from_slice(data);
        Ok(())
    }
}

/// Unpack `count` little-endian elements from a run of words.
pub fn unpack_elems(words: &[u64], count: usize, width: ElemWidth) -> Vec<i32> {
    let bits = width.bits();
    let per_word = width.per_word();
    (0..count)
        .map(|e| {
            let word = words[e / per_word];
            let raw = (word >> ((e % per_word) * bits)) & ((1u64 << bits) - 1);
            match width {
                ElemWidth::I8 => raw as u8 as i8 as i32,
                ElemWidth::I32 => raw as u32 as i32,
            }
        })
        .collect()
}

/// Pack elements little-endian into whole words, zero-padding the tail.
pub fn pack_elems(elems: &[i32], width: ElemWidth) -> Vec<u64> {
    let bits = width.bits();
    let per_word = width.per_word();
    let mask = (1u64 << bits) - 1;
    let mut words = vec![0u64; width.words_for(elems.len())];
    for (e, &v) in elems.iter().enumerate() {
        words[e / per_word] |= (v as u32 as u64 & mask) << ((e % per_word) * bits);
    }
    words
}

/// Read one row of `elems` elements starting at word `addr`.
///
/// The row tag is the fold of every covered word's tag.
pub fn dma_load_row(
    mem: &mut TaggedMemory,
    addr: u64,
    elems: usize,
    width: ElemWidth,
    cycle: u64,
    policy: TagPolicy,
) -> Result<TaggedRow, DmaError> {
    let words = mem.read(addr, width.words_for(elems) as u64, cycle)?;
    let tag = policy.fold(words.iter().map(|w| w.tag))?;
    let data: Vec<u64> = words.iter().map(|w| w.data).collect();
    Ok(TaggedRow::new(unpack_elems(&data, elems, width), tag))
}

/// Write a row to memory, replicating its tag onto every covered word.
pub fn dma_store_row(
    mem: &mut TaggedMemory,
    addr: u64,
    row: &TaggedRow,
    width: ElemWidth,
    cycle: u64,
) -> Result<(), OutOfRange> {
    let words: Vec<TaggedWord> = pack_elems(&row.elems, width)
        .into_iter()
        .map(|data| TaggedWord::new(data, row.tag))
        .collect();
    mem.write(addr, &words, cycle)
}
