//! Row-tagged scratchpad bank with a two-stage write pipeline.
//!
//! The backing SRAM is synchronous: a request issued in one cycle has its
//! data one cycle later, and the bank services a single read or write per
//! cycle. Writes therefore use the first stage to fetch the row's current
//! tag and commit in the second stage once the tag check passes. A read
//! that lands in stage 1 while a write to the same row sits in stage 2 is
//! served through a bypass, and only if that write committed.
//!
//! ```text
//!            stage 1                     stage 2
//!  req ──► sample data+tag ──latch──► read:  respond with sample
//!                                     write: check tag, commit, bypass ─┐
//!            ▲                                                          │
//!            └─────────────── forward if same row and no fault ◄────────┘
//! ```

use thiserror::Error;

use crate::row::{ElemWidth, TaggedRow};
use crate::tag::{MixingFault, Tag, TagPolicy};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WriteRequest {
    pub row: usize,
    pub data: Vec<i32>,
    /// One write-enable bit per element.
    pub mask: Vec<bool>,
    pub tag: Tag,
    /// Add into the existing row instead of replacing it (accumulator banks only).
    pub accumulate: bool,
}

impl WriteRequest {
    /// Overwrite the whole row.
    pub fn full(row: usize, data: TaggedRow) -> Self {
        let width = data.width();
        Self {
            row,
            data: data.elems,
            mask: vec![true; width],
            tag: data.tag,
            accumulate: false,
        }
    }

    /// Write only the lanes whose mask bit is set.
    pub fn masked(row: usize, data: TaggedRow, mask: Vec<bool>) -> Self {
        Self {
            row,
            data: data.elems,
            mask,
            tag: data.tag,
            accumulate: false,
        }
    }

    pub fn accumulating(mut self) -> Self {
        self.accumulate = true;
        self
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SpadRequest {
    Read { row: usize },
    Write(WriteRequest),
}

/// Which of the offered requests entered stage 1 this cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Grant {
    None,
    Read,
    /// The write won; an offered read (if any) was refused and must be retried.
    Write {
        refused_read: bool,
    },
}

impl Grant {
    pub fn read_accepted(self) -> bool {
        matches!(self, Grant::Read)
    }

    pub fn write_accepted(self) -> bool {
        matches!(self, Grant::Write { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SpadResponse {
    None,
    ReadData(TaggedRow),
    Committed { row: usize },
    Fault { row: usize, fault: MixingFault },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum SpadError {
    #[error("row {row} outside bank depth {depth}")]
    RowOutOfRange { row: usize, depth: usize },
    #[error("write carries {got} lanes, bank rows are {width} wide")]
    WidthMismatch { got: usize, width: usize },
    #[error("accumulating write to a non-accumulator bank")]
    NotAccumulator,
    #[error("a request was already accepted this cycle")]
    PortBusy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BankCounters {
    pub reads: u64,
    pub writes: u64,
    pub refused_reads: u64,
    pub bypasses: u64,
    pub faults: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Stage2 {
    Read { sample: TaggedRow },
    Write { req: WriteRequest, current_tag: Tag },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScratchpadBank {
    rows: Vec<TaggedRow>,
    width: usize,
    elem: ElemWidth,
    accumulate: bool,
    policy: TagPolicy,
    stage1: Option<SpadRequest>,
    stage2: Option<Stage2>,
    fault: Option<MixingFault>,
    counters: BankCounters,
}

impl ScratchpadBank {
    pub fn new(depth: usize, width: usize, elem: ElemWidth) -> Self {
        Self {
            rows: vec![TaggedRow::zeroed(width); depth],
            width,
            elem,
            accumulate: false,
            policy: TagPolicy::Enforce,
            stage1: None,
            stage2: None,
            fault: None,
            counters: BankCounters::default(),
        }
    }

    /// An accumulator bank: 32-bit rows that accept accumulating writes.
    pub fn accumulator(depth: usize, width: usize) -> Self {
        Self {
            accumulate: true,
            ..Self::new(depth, width, ElemWidth::I32)
        }
    }

    pub fn with_policy(mut self, policy: TagPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn depth(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn elem_width(&self) -> ElemWidth {
        self.elem
    }

    pub fn is_accumulator(&self) -> bool {
        self.accumulate
    }

    pub fn rows(&self) -> &[TaggedRow] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> Option<&TaggedRow> {
        self.rows.get(index)
    }

    /// Sticky: the first tag-mixing fault seen by this bank.
    pub fn fault(&self) -> Option<MixingFault> {
        self.fault
    }

    pub fn counters(&self) -> BankCounters {
        self.counters
    }

    /// No request is latched in either stage.
    pub fn is_idle(&self) -> bool {
        self.stage1.is_none() && self.stage2.is_none()
    }

    /// Direct row store used to set up test fixtures; bypasses the pipeline.
    pub fn load_row(&mut self, index: usize, row: TaggedRow) {
        assert_eq!(row.width(), self.width);
        self.rows[index] = row;
    }

    fn check_row(&self, row: usize) -> Result<(), SpadError> {
        if row < self.depth() {
            Ok(())
        } else {
            Err(SpadError::RowOutOfRange {
                row,
                depth: self.depth(),
            })
        }
    }

    fn check_write(&self, req: &WriteRequest) -> Result<(), SpadError> {
        self.check_row(req.row)?;
        for len in [req.data.len(), req.mask.len()] {
            if len != self.width {
                return Err(SpadError::WidthMismatch {
                    got: len,
                    width: self.width,
                });
            }
        }
        if req.accumulate && !self.accumulate {
            return Err(SpadError::NotAccumulator);
        }
        Ok(())
    }

    /// Offer this cycle's read and write. Writes win; a refused read must
    /// be offered again by the caller.
    pub fn arbitrate(&mut self, read: Option<usize>, write: Option<WriteRequest>) -> Result<Grant, SpadError> {
        if self.stage1.is_some() && (read.is_some() || write.is_some()) {
            return Err(SpadError::PortBusy);
        }
        if let Some(row) = read {
            self.check_row(row)?;
        }
        if let Some(req) = &write {
            self.check_write(req)?;
        }
        Ok(match (read, write) {
            (read, Some(req)) => {
                self.stage1 = Some(SpadRequest::Write(req));
                self.counters.writes += 1;
                if read.is_some() {
                    self.counters.refused_reads += 1;
                }
                Grant::Write {
                    refused_read: read.is_some(),
                }
            }
            (Some(row), None) => {
                self.stage1 = Some(SpadRequest::Read { row });
                self.counters.reads += 1;
                Grant::Read
            }
            (None, None) => Grant::None,
        })
    }

    /// Offer a single request; returns whether it was accepted.
    pub fn request(&mut self, req: SpadRequest) -> Result<bool, SpadError> {
        let grant = match req {
            SpadRequest::Read { row } => self.arbitrate(Some(row), None)?,
            SpadRequest::Write(w) => self.arbitrate(None, Some(w))?,
        };
        Ok(grant != Grant::None)
    }

    /// Advance one clock edge.
    pub fn step(&mut self) -> SpadResponse {
        // Stage 1 samples the SRAM in the same cycle stage 2 writes it.
        let sampled = self.stage1.take().map(|req| match req {
            SpadRequest::Read { row } => (
                row,
                Stage2::Read {
                    sample: self.rows[row].clone(),
                },
            ),
            SpadRequest::Write(req) => {
                let current_tag = self.rows[req.row].tag;
                (req.row, Stage2::Write { req, current_tag })
            }
        });

        let (response, committed) = match self.stage2.take() {
            None => (SpadResponse::None, None),
            Some(Stage2::Read { sample }) => (SpadResponse::ReadData(sample), None),
            Some(Stage2::Write { req, current_tag }) => match self.commit(&req, current_tag) {
                Ok(()) => (SpadResponse::Committed { row: req.row }, Some(req.row)),
                Err(fault) => {
                    self.counters.faults += 1;
                    self.fault.get_or_insert(fault);
                    (SpadResponse::Fault { row: req.row, fault }, None)
                }
            },
        };

        self.stage2 = sampled.map(|(row, mut stage)| {
            if committed == Some(row) {
                self.counters.bypasses += 1;
                match &mut stage {
                    Stage2::Read { sample } => *sample = self.rows[row].clone(),
                    Stage2::Write { current_tag, .. } => *current_tag = self.rows[row].tag,
                }
            }
            stage
        });
        response
    }

    fn commit(&mut self, req: &WriteRequest, current_tag: Tag) -> Result<(), MixingFault> {
        let elem = self.elem;
        let target = &mut self.rows[req.row];
        if req.accumulate {
            let tag = self.policy.join(current_tag, req.tag)?;
            for ((old, &new), &en) in target.elems.iter_mut().zip(&req.data).zip(&req.mask) {
                if en {
                    *old = elem.truncate(old.wrapping_add(new));
                }
            }
            target.tag = tag;
        } else if req.is_full() {
            // Nothing of the old row survives, so no check is needed.
            target.elems = req.data.iter().map(|&v| elem.truncate(v)).collect();
            target.tag = req.tag;
        } else {
            let tag = self.policy.join(current_tag, req.tag)?;
            for ((old, &new), &en) in target.elems.iter_mut().zip(&req.data).zip(&req.mask) {
                if en {
                    *old = elem.truncate(new);
                }
            }
            target.tag = tag;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: u8) -> Tag {
        Tag::new(v)
    }

    fn bank() -> ScratchpadBank {
        ScratchpadBank::new(8, 4, ElemWidth::I8)
    }

    #[test]
    fn lone_write_is_accepted() {
        let mut b = bank();
        let w = WriteRequest::full(0, TaggedRow::new(vec![1, 2, 3, 4], t(1)));
        assert_eq!(
            b.arbitrate(None, Some(w)).unwrap(),
            Grant::Write { refused_read: false }
        );
    }

    #[test]
    fn write_beats_read_in_the_same_cycle() {
        let mut b = bank();
        let w = WriteRequest::full(0, TaggedRow::new(vec![1, 2, 3, 4], t(1)));
        let g = b.arbitrate(Some(1), Some(w)).unwrap();
        assert_eq!(g, Grant::Write { refused_read: true });
        assert!(!g.read_accepted());
        assert_eq!(b.counters().refused_reads, 1);
    }

    #[test]
    fn read_out_of_range() {
        let mut b = bank();
        assert_eq!(
            b.request(SpadRequest::Read { row: 8 }),
            Err(SpadError::RowOutOfRange { row: 8, depth: 8 })
        );
    }

    #[test]
    fn second_request_in_a_cycle_is_rejected() {
        let mut b = bank();
        b.request(SpadRequest::Read { row: 0 }).unwrap();
        assert_eq!(b.request(SpadRequest::Read { row: 1 }), Err(SpadError::PortBusy));
    }

    #[test]
    fn write_lane_count_must_match() {
        let mut b = bank();
        let w = WriteRequest::full(0, TaggedRow::new(vec![1, 2], t(0)));
        assert!(matches!(
            b.request(SpadRequest::Write(w)),
            Err(SpadError::WidthMismatch { got: 2, width: 4 })
        ));
        let acc = WriteRequest::full(0, TaggedRow::zeroed(4)).accumulating();
        assert_eq!(b.request(SpadRequest::Write(acc)), Err(SpadError::NotAccumulator));
    }

    #[test]
    fn read_has_one_cycle_latency() {
        let mut b = bank();
        b.load_row(2, TaggedRow::new(vec![9, 8, 7, 6], t(4)));
        b.request(SpadRequest::Read { row: 2 }).unwrap();
        assert_eq!(b.step(), SpadResponse::None);
        assert_eq!(b.step(), SpadResponse::ReadData(TaggedRow::new(vec![9, 8, 7, 6], t(4))));
        assert!(b.is_idle());
    }

    #[test]
    fn bypass_forwards_committed_write() {
        let mut b = bank();
        let x = TaggedRow::new(vec![1, 2, 3, 4], t(2));
        b.request(SpadRequest::Write(WriteRequest::full(3, x.clone()))).unwrap();
        assert_eq!(b.step(), SpadResponse::None);
        b.request(SpadRequest::Read { row: 3 }).unwrap();
        assert_eq!(b.step(), SpadResponse::Committed { row: 3 });
        assert_eq!(b.step(), SpadResponse::ReadData(x));
        assert_eq!(b.counters().bypasses, 1);
    }

    #[test]
    fn bypass_suppressed_when_write_faults() {
        let mut b = bank();
        let old = TaggedRow::new(vec![5, 5, 5, 5], t(4));
        b.load_row(1, old.clone());
        let incoming = TaggedRow::new(vec![1, 1, 1, 1], t(2));
        let w = WriteRequest::masked(1, incoming, vec![true, false, true, false]);
        b.request(SpadRequest::Write(w)).unwrap();
        b.step();
        b.request(SpadRequest::Read { row: 1 }).unwrap();
        assert!(matches!(b.step(), SpadResponse::Fault { row: 1, .. }));
        assert_eq!(b.step(), SpadResponse::ReadData(old.clone()));
        assert_eq!(b.row(1), Some(&old));
        assert_eq!(
            b.fault(),
            Some(MixingFault {
                left: t(4),
                right: t(2)
            })
        );
    }

    #[test]
    fn full_write_replaces_tag_without_check() {
        let mut b = bank();
        b.load_row(0, TaggedRow::new(vec![1, 1, 1, 1], t(7)));
        b.request(SpadRequest::Write(WriteRequest::full(0, TaggedRow::zeroed(4))))
            .unwrap();
        b.step();
        assert_eq!(b.step(), SpadResponse::Committed { row: 0 });
        assert_eq!(b.row(0), Some(&TaggedRow::zeroed(4)));
        assert_eq!(b.fault(), None);
    }

    #[test]
    fn partial_write_onto_public_row_merges() {
        let mut b = bank();
        b.load_row(0, TaggedRow::new(vec![10, 20, 30, 40], t(0)));
        let w = WriteRequest::masked(
            0,
            TaggedRow::new(vec![-1, -2, -3, -4], t(5)),
            vec![false, true, true, false],
        );
        b.request(SpadRequest::Write(w)).unwrap();
        b.step();
        b.step();
        assert_eq!(b.row(0), Some(&TaggedRow::new(vec![10, -2, -3, 40], t(5))));
    }

    #[test]
    fn back_to_back_writes_see_each_others_tags() {
        let mut b = bank();
        let first = WriteRequest::masked(
            0,
            TaggedRow::new(vec![1, 0, 0, 0], t(3)),
            vec![true, false, false, false],
        );
        let second = WriteRequest::masked(
            0,
            TaggedRow::new(vec![0, 2, 0, 0], t(6)),
            vec![false, true, false, false],
        );
        b.request(SpadRequest::Write(first)).unwrap();
        b.step();
        b.request(SpadRequest::Write(second)).unwrap();
        assert_eq!(b.step(), SpadResponse::Committed { row: 0 });
        assert!(matches!(b.step(), SpadResponse::Fault { row: 0, .. }));
        assert_eq!(b.row(0), Some(&TaggedRow::new(vec![1, 0, 0, 0], t(3))));
    }

    #[test]
    fn accumulate_adds_and_joins() {
        let mut b = ScratchpadBank::accumulator(4, 2);
        b.load_row(0, TaggedRow::new(vec![100, i32::MAX], t(0)));
        let w = WriteRequest::full(0, TaggedRow::new(vec![5, 1], t(9))).accumulating();
        b.request(SpadRequest::Write(w)).unwrap();
        b.step();
        b.step();
        assert_eq!(b.row(0), Some(&TaggedRow::new(vec![105, i32::MIN], t(9))));

        let clash = WriteRequest::full(0, TaggedRow::new(vec![1, 1], t(8))).accumulating();
        b.request(SpadRequest::Write(clash)).unwrap();
        b.step();
        assert!(matches!(b.step(), SpadResponse::Fault { .. }));
        assert_eq!(b.row(0).unwrap().elems, vec![105, i32::MIN]);
    }

    #[test]
    fn full_rate_write_stream_takes_n_plus_one_cycles() {
        for n in [1usize, 2, 7, 32] {
            let mut b = ScratchpadBank::new(64, 4, ElemWidth::I8);
            let mut cycles = 0;
            let mut committed = 0;
            for i in 0..n {
                let row = TaggedRow::new(vec![i as i32; 4], t(1));
                assert!(b.request(SpadRequest::Write(WriteRequest::full(i, row))).unwrap());
                if let SpadResponse::Committed { .. } = b.step() {
                    committed += 1;
                }
                cycles += 1;
            }
            while !b.is_idle() {
                if let SpadResponse::Committed { .. } = b.step() {
                    committed += 1;
                }
                cycles += 1;
            }
            assert_eq!(committed, n);
            assert_eq!(cycles, n + 1);
        }
    }
}
