//! Cycle-stepped systolic array with row-granularity tag tracking.
//!
//! No processing element carries a tag. Each output row's tag is computed
//! once, when its inputs are handed to the array, and then travels through
//! a single delay line whose length equals the array's fixed output
//! latency. Because that latency depends only on the array shape, the tag
//! pops out of the queue on exactly the cycle its data row leaves the
//! de-skew registers.
//!
//! Weight-stationary timing for a row fed at cycle `t` into an `R x C`
//! array: element `a[k]` reaches PE `(k, j)` at `t + k + j`, the partial
//! sum for column `j` leaves the bottom row at `t + R - 1 + j`, and the
//! de-skew lines align every column so the whole row emerges at `t + R + C`.
//!
//! Output-stationary keeps `D` (then the running sums) in the PEs while
//! columns of `A` move right and rows of `B` move down. Row `i` is final
//! `C - 1 + i` cycles after the last stream step and is drained so that it
//! leaves the array `2R + C + i` cycles after that step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::row::TaggedRow;
use crate::tag::{MixingFault, Tag, TagPolicy};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataflow {
    #[default]
    WeightStationary,
    OutputStationary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

impl Activation {
    /// Applied lane-wise on the output path. ReLU is a sign mask, so every
    /// value takes the same path through the logic.
    pub fn apply(self, x: i32) -> i32 {
        match self {
            Activation::None => x,
            Activation::Relu => x & !(x >> 31),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeshConfig {
    pub rows: usize,
    pub cols: usize,
    pub dataflow: Dataflow,
    pub activation: Activation,
}

impl MeshConfig {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "mesh must be at least 1x1");
        Self {
            rows,
            cols,
            dataflow: Dataflow::WeightStationary,
            activation: Activation::None,
        }
    }

    pub fn square(dim: usize) -> Self {
        Self::new(dim, dim)
    }

    pub fn with_dataflow(mut self, dataflow: Dataflow) -> Self {
        self.dataflow = dataflow;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Cycles between handing a row to the array and its result leaving.
    pub fn output_latency(&self) -> usize {
        match self.dataflow {
            Dataflow::WeightStationary => self.rows + self.cols,
            Dataflow::OutputStationary => 2 * self.rows + self.cols,
        }
    }

    /// Tag registers in the row-granularity design: one queue slot per
    /// cycle of latency.
    pub fn tag_registers(&self) -> usize {
        self.output_latency()
    }

    /// Tag registers a per-PE tracking design would need.
    pub fn per_pe_tag_registers(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum MeshError {
    #[error(transparent)]
    Mixing(#[from] MixingFault),
    #[error("mesh halted by an earlier tag fault")]
    Halted,
    #[error("no stationary operand preloaded")]
    NotPreloaded,
    #[error("operation needs {0:?} dataflow")]
    WrongDataflow(Dataflow),
    #[error("operand has {got} lanes/rows, mesh expects at most {expected}")]
    Shape { expected: usize, got: usize },
    #[error("mesh still has rows in flight")]
    Busy,
    #[error("an input was already supplied this cycle")]
    InputBusy,
    #[error("output-stationary pass already received all {0} stream steps")]
    StreamComplete(usize),
    #[error("output-stationary pass needs at least one stream step")]
    EmptyStream,
}

/// Fixed-length shift register; a value shifted in emerges `len` shifts later.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct DelayLine<T> {
    slots: VecDeque<Option<T>>,
}

impl<T: Clone> DelayLine<T> {
    fn new(len: usize) -> Self {
        Self {
            slots: std::iter::repeat_with(|| None).take(len).collect(),
        }
    }

    fn shift(&mut self, value: Option<T>) -> Option<T> {
        if self.slots.is_empty() {
            return value;
        }
        self.slots.push_back(value);
        self.slots.pop_front().flatten()
    }

    fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    fn contents(&self) -> impl Iterator<Item = Option<&T>> {
        self.slots.iter().map(Option::as_ref)
    }

    fn len(&self) -> usize {
        self.slots.len()
    }
}

/// A value moving through the array, labelled with the input row it
/// belongs to (for tracing only; the datapath never inspects it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Lane {
    value: i32,
    source: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Feed {
    Row { a: Vec<i32>, d: Vec<i32>, tag: Tag },
    Stream { a: Vec<i32>, b: Vec<i32>, last: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct StreamPass {
    /// Per output row: join of its `A` and `D` row tags.
    partial_tags: Vec<Tag>,
    b_tag: Tag,
    len: usize,
    fed: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Scheduled {
    at: u64,
    row: usize,
}

/// A row leaving the array together with its tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EmittedRow {
    pub row: TaggedRow,
    /// Sequence number of the input row (weight-stationary) or output row
    /// index (output-stationary) this result belongs to.
    pub source: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mesh {
    config: MeshConfig,
    policy: TagPolicy,
    cycle: u64,
    fault: Option<MixingFault>,
    preloaded: bool,

    /// Weight-stationary: the preloaded `B`.
    weights: Vec<Vec<i32>>,
    stationary_tag: Tag,
    /// Output-stationary: per-row tags of the preloaded `D`.
    acc_tags: Vec<Tag>,
    /// Output-stationary accumulators.
    acc: Vec<Vec<i32>>,

    west_skew: Vec<DelayLine<Lane>>,
    north_skew: Vec<DelayLine<i32>>,
    east_regs: Vec<Vec<Option<Lane>>>,
    south_regs: Vec<Vec<Option<i32>>>,
    deskew: Vec<DelayLine<i32>>,
    tag_queue: DelayLine<Tag>,

    incoming: Option<Feed>,
    fed_rows: usize,
    emitted_rows: usize,

    stream: Option<StreamPass>,
    tag_pushes: VecDeque<(Scheduled, Tag)>,
    captures: VecDeque<Scheduled>,
    drain: VecDeque<(u64, usize, Vec<i32>)>,
}

impl Mesh {
    pub fn new(config: MeshConfig) -> Self {
        Self::with_policy(config, TagPolicy::Enforce)
    }

    pub fn with_policy(config: MeshConfig, policy: TagPolicy) -> Self {
        let (r, c) = (config.rows, config.cols);
        Self {
            config,
            policy,
            cycle: 0,
            fault: None,
            preloaded: false,
            weights: vec![vec![0; c]; r],
            stationary_tag: Tag::PUBLIC,
            acc_tags: vec![Tag::PUBLIC; r],
            acc: vec![vec![0; c]; r],
            west_skew: (0..r).map(DelayLine::new).collect(),
            north_skew: (0..c).map(DelayLine::new).collect(),
            east_regs: vec![vec![None; c]; r],
            south_regs: vec![vec![None; c]; r],
            deskew: (0..c).map(|j| DelayLine::new(c + 1 - j)).collect(),
            tag_queue: DelayLine::new(config.output_latency()),
            incoming: None,
            fed_rows: 0,
            emitted_rows: 0,
            stream: None,
            tag_pushes: VecDeque::new(),
            captures: VecDeque::new(),
            drain: VecDeque::new(),
        }
    }

    pub fn config(&self) -> MeshConfig {
        self.config
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn fault(&self) -> Option<MixingFault> {
        self.fault
    }

    pub fn is_preloaded(&self) -> bool {
        self.preloaded
    }

    pub fn stationary_tag(&self) -> Tag {
        self.stationary_tag
    }

    pub fn emitted_rows(&self) -> usize {
        self.emitted_rows
    }

    pub fn tag_queue_depth(&self) -> usize {
        self.tag_queue.len()
    }

    /// Tags currently in the queue, oldest (next to emerge) first.
    pub fn tag_queue_contents(&self) -> Vec<Option<Tag>> {
        self.tag_queue.contents().map(|t| t.copied()).collect()
    }

    /// For each PE, the input row whose value it currently holds.
    pub fn occupancy(&self) -> Vec<Vec<Option<usize>>> {
        self.east_regs
            .iter()
            .map(|r| r.iter().map(|l| l.map(|l| l.source)).collect())
            .collect()
    }

    /// No input, partial sum, tag or pending output remains in the array.
    pub fn is_idle(&self) -> bool {
        self.incoming.is_none()
            && self.stream.is_none()
            && self.tag_pushes.is_empty()
            && self.captures.is_empty()
            && self.drain.is_empty()
            && self.tag_queue.is_empty()
            && self.deskew.iter().all(DelayLine::is_empty)
            && self.west_skew.iter().all(DelayLine::is_empty)
            && self.north_skew.iter().all(DelayLine::is_empty)
            && self.east_regs.iter().flatten().all(Option::is_none)
            && self.south_regs.iter().flatten().all(Option::is_none)
    }

    /// Change dataflow or activation; only allowed while idle. Switching
    /// dataflow discards the preloaded operand.
    pub fn reconfigure(&mut self, dataflow: Dataflow, activation: Activation) -> Result<(), MeshError> {
        if !self.is_idle() {
            return Err(MeshError::Busy);
        }
        if dataflow != self.config.dataflow {
            self.config.dataflow = dataflow;
            self.tag_queue = DelayLine::new(self.config.output_latency());
            self.preloaded = false;
        }
        self.config.activation = activation;
        Ok(())
    }

    fn set_fault(&mut self, fault: MixingFault) -> MeshError {
        self.fault.get_or_insert(fault);
        MeshError::Mixing(fault)
    }

    fn check_live(&self) -> Result<(), MeshError> {
        match self.fault {
            Some(_) => Err(MeshError::Halted),
            None => Ok(()),
        }
    }

    fn check_width(expected: usize, got: usize) -> Result<(), MeshError> {
        if got > expected {
            Err(MeshError::Shape { expected, got })
        } else {
            Ok(())
        }
    }

    fn padded(values: &[i32], width: usize) -> Vec<i32> {
        let mut v = values.to_vec();
        v.resize(width, 0);
        v
    }

    /// Latch the stationary operand: `B` for weight-stationary, `D` for
    /// output-stationary. Missing rows and lanes are zero and public.
    pub fn preload(&mut self, stationary: &[TaggedRow]) -> Result<(), MeshError> {
        self.check_live()?;
        if !self.is_idle() {
            return Err(MeshError::Busy);
        }
        let (r, c) = (self.config.rows, self.config.cols);
        Self::check_width(r, stationary.len())?;
        for row in stationary {
            Self::check_width(c, row.width())?;
        }
        let rows = stationary
            .iter()
            .map(|row| Self::padded(&row.elems, c))
            .chain(std::iter::repeat_with(|| vec![0; c]))
            .take(r);
        match self.config.dataflow {
            Dataflow::WeightStationary => {
                let tag = self.policy.fold(stationary.iter().map(|row| row.tag)).map_err(|f| {
                    self.preloaded = false;
                    self.set_fault(f)
                })?;
                self.weights = rows.collect();
                self.stationary_tag = tag;
            }
            Dataflow::OutputStationary => {
                self.acc = rows.collect();
                self.acc_tags = stationary
                    .iter()
                    .map(|row| row.tag)
                    .chain(std::iter::repeat(Tag::PUBLIC))
                    .take(r)
                    .collect();
            }
        }
        self.preloaded = true;
        Ok(())
    }

    /// Output-row tag for a weight-stationary row: join of its `A` row, its
    /// `D` row and the whole stationary `B`.
    pub fn output_row_tag(&self, a_tag: Tag, d_tag: Tag) -> Result<Tag, MixingFault> {
        self.policy.fold([a_tag, d_tag, self.stationary_tag])
    }

    /// Hand one `A` row and its matching `D` row to the array this cycle.
    pub fn feed_row(&mut self, a: &TaggedRow, d: &TaggedRow) -> Result<(), MeshError> {
        self.check_live()?;
        if self.config.dataflow != Dataflow::WeightStationary {
            return Err(MeshError::WrongDataflow(Dataflow::WeightStationary));
        }
        if !self.preloaded {
            return Err(MeshError::NotPreloaded);
        }
        if self.incoming.is_some() {
            return Err(MeshError::InputBusy);
        }
        Self::check_width(self.config.rows, a.width())?;
        Self::check_width(self.config.cols, d.width())?;
        let tag = self.output_row_tag(a.tag, d.tag).map_err(|f| self.set_fault(f))?;
        self.incoming = Some(Feed::Row {
            a: Self::padded(&a.elems, self.config.rows),
            d: Self::padded(&d.elems, self.config.cols),
            tag,
        });
        Ok(())
    }

    /// Start an output-stationary pass producing one output row per entry of
    /// `a_tags`, over `len` stream steps. Each row's `A`/`D` compatibility is
    /// checked here, before any value enters the array.
    pub fn begin_stream(&mut self, a_tags: &[Tag], len: usize) -> Result<(), MeshError> {
        self.check_live()?;
        if self.config.dataflow != Dataflow::OutputStationary {
            return Err(MeshError::WrongDataflow(Dataflow::OutputStationary));
        }
        if !self.preloaded {
            return Err(MeshError::NotPreloaded);
        }
        if self.stream.is_some() || !self.drain.is_empty() || !self.captures.is_empty() {
            return Err(MeshError::Busy);
        }
        Self::check_width(self.config.rows, a_tags.len())?;
        if len == 0 {
            return Err(MeshError::EmptyStream);
        }
        let mut partial_tags = Vec::with_capacity(a_tags.len());
        for (i, &a) in a_tags.iter().enumerate() {
            let t = self.policy.join(a, self.acc_tags[i]).map_err(|f| self.set_fault(f))?;
            partial_tags.push(t);
        }
        self.stream = Some(StreamPass {
            partial_tags,
            b_tag: Tag::PUBLIC,
            len,
            fed: 0,
        });
        Ok(())
    }

    /// One output-stationary stream step: column `k` of `A` (one value per
    /// output row) and row `k` of `B`.
    pub fn feed_stream(&mut self, a_column: &[i32], b: &TaggedRow) -> Result<(), MeshError> {
        self.check_live()?;
        if self.incoming.is_some() {
            return Err(MeshError::InputBusy);
        }
        let (r, c) = (self.config.rows, self.config.cols);
        Self::check_width(r, a_column.len())?;
        Self::check_width(c, b.width())?;
        let policy = self.policy;
        let pass = self.stream.as_mut().ok_or(MeshError::NotPreloaded)?;
        if pass.fed == pass.len {
            return Err(MeshError::StreamComplete(pass.len));
        }
        let checked = policy.join(pass.b_tag, b.tag).and_then(|b_tag| {
            pass.partial_tags
                .iter()
                .try_for_each(|&p| policy.join(p, b_tag).map(drop))
                .map(|()| b_tag)
        });
        let b_tag = checked.map_err(|f| self.set_fault(f))?;
        let pass = self.stream.as_mut().expect("checked above");
        pass.b_tag = b_tag;
        pass.fed += 1;
        let last = pass.fed == pass.len;
        self.incoming = Some(Feed::Stream {
            a: Self::padded(a_column, r),
            b: Self::padded(&b.elems, c),
            last,
        });
        Ok(())
    }

    /// Advance one cycle. Returns the row leaving the array, if any.
    pub fn step(&mut self) -> Option<EmittedRow> {
        let now = self.cycle;
        self.cycle += 1;
        let out = match self.config.dataflow {
            Dataflow::WeightStationary => self.step_weight_stationary(),
            Dataflow::OutputStationary => self.step_output_stationary(now),
        };
        // After a fault nothing leaves the array, including rows in flight.
        let out = out.filter(|_| self.fault.is_none());
        out.map(|(source, values, tag)| {
            self.emitted_rows += 1;
            let act = self.config.activation;
            EmittedRow {
                row: TaggedRow::new(values.into_iter().map(|x| act.apply(x)).collect(), tag),
                source,
            }
        })
    }

    fn step_weight_stationary(&mut self) -> Option<(usize, Vec<i32>, Tag)> {
        let (r, c) = (self.config.rows, self.config.cols);
        let (a_in, d_in, tag_in) = match self.incoming.take() {
            Some(Feed::Row { a, d, tag }) => {
                let source = self.fed_rows;
                self.fed_rows += 1;
                let lanes = a.into_iter().map(|value| Some(Lane { value, source }));
                (lanes.collect(), d.into_iter().map(Some).collect(), Some(tag))
            }
            _ => (vec![None; r], vec![None; c], None),
        };
        let west: Vec<Option<Lane>> = self
            .west_skew
            .iter_mut()
            .zip(a_in)
            .map(|(line, v)| line.shift(v))
            .collect();
        let north: Vec<Option<i32>> = self
            .north_skew
            .iter_mut()
            .zip(d_in)
            .map(|(line, v)| line.shift(v))
            .collect();

        // Walk against the flow so every register reads its neighbour's old value.
        for k in (0..r).rev() {
            for j in (0..c).rev() {
                let a = if j == 0 { west[k] } else { self.east_regs[k][j - 1] };
                let psum = if k == 0 { north[j] } else { self.south_regs[k - 1][j] };
                self.south_regs[k][j] = match (a, psum) {
                    (Some(a), Some(p)) => Some(p.wrapping_add(a.value.wrapping_mul(self.weights[k][j]))),
                    _ => None,
                };
                self.east_regs[k][j] = a;
            }
        }

        let bottom = &self.south_regs[r - 1];
        let out: Vec<Option<i32>> = self
            .deskew
            .iter_mut()
            .zip(bottom)
            .map(|(line, &v)| line.shift(v))
            .collect();
        let tag = self.tag_queue.shift(tag_in);
        let values: Option<Vec<i32>> = out.into_iter().collect();
        debug_assert_eq!(values.is_some(), tag.is_some(), "tag queue out of step with data");
        let source = self.emitted_rows;
        values.zip(tag).map(|(v, t)| (source, v, t))
    }

    fn step_output_stationary(&mut self, now: u64) -> Option<(usize, Vec<i32>, Tag)> {
        let (r, c) = (self.config.rows, self.config.cols);
        let latency = self.config.output_latency() as u64;
        let (a_in, b_in) = match self.incoming.take() {
            Some(Feed::Stream { a, b, last }) => {
                let step = self.fed_rows;
                self.fed_rows += 1;
                if last {
                    let pass = self.stream.take().expect("stream pass active");
                    for (i, partial) in pass.partial_tags.iter().enumerate() {
                        let tag = self.policy.join(*partial, pass.b_tag).expect("checked at feed time");
                        self.tag_pushes.push_back((
                            Scheduled {
                                at: now + i as u64,
                                row: i,
                            },
                            tag,
                        ));
                        self.captures.push_back(Scheduled {
                            at: now + i as u64 + c as u64 - 1,
                            row: i,
                        });
                    }
                }
                let lanes = a.into_iter().map(|value| Some(Lane { value, source: step }));
                (lanes.collect(), b.into_iter().map(Some).collect())
            }
            _ => (vec![None; r], vec![None; c]),
        };
        let west: Vec<Option<Lane>> = self
            .west_skew
            .iter_mut()
            .zip(a_in)
            .map(|(line, v)| line.shift(v))
            .collect();
        let north: Vec<Option<i32>> = self
            .north_skew
            .iter_mut()
            .zip(b_in)
            .map(|(line, v)| line.shift(v))
            .collect();

        for i in (0..r).rev() {
            for j in (0..c).rev() {
                let a = if j == 0 { west[i] } else { self.east_regs[i][j - 1] };
                let b = if i == 0 { north[j] } else { self.south_regs[i - 1][j] };
                if let (Some(a), Some(b)) = (a, b) {
                    self.acc[i][j] = self.acc[i][j].wrapping_add(a.value.wrapping_mul(b));
                }
                self.east_regs[i][j] = a;
                self.south_regs[i][j] = b;
            }
        }

        while self.captures.front().is_some_and(|s| s.at == now) {
            let s = self.captures.pop_front().expect("front checked");
            let emerge = now + latency - (c as u64 - 1);
            self.drain.push_back((emerge, s.row, self.acc[s.row].clone()));
        }

        let tag_in = match self.tag_pushes.front() {
            Some((s, _)) if s.at == now => self.tag_pushes.pop_front().map(|(_, t)| t),
            _ => None,
        };
        let tag = self.tag_queue.shift(tag_in);
        let emerging = match self.drain.front() {
            Some((at, _, _)) if *at == now => self.drain.pop_front(),
            _ => None,
        };
        debug_assert_eq!(emerging.is_some(), tag.is_some(), "tag queue out of step with data");
        emerging.zip(tag).map(|((_, row, values), t)| (row, values, t))
    }
}
