//! Accelerator front end: command hygiene, sequencing, and the cycle loop.
//!
//! Commands execute strictly in order, one at a time. Within a command the
//! controller drives every unit once per cycle in a fixed order (DMA, then
//! the two scratchpad banks, then the mesh), so the number of cycles a
//! command takes and the memory bursts it issues are functions of its
//! operands and the configured shapes only.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{Command, CommandKind, DecodeError, LocalAddr, Op};
use crate::memory::{self, AccessTrace, DmaError, OutOfRange, TaggedMemory};
use crate::mesh::{Activation, Dataflow, EmittedRow, Mesh, MeshConfig, MeshError};
use crate::row::{ElemWidth, TaggedRow};
use crate::scratchpad::{Grant, ScratchpadBank, SpadError, SpadResponse, WriteRequest};
use crate::tag::{MixingFault, Tag, TagPolicy};
use crate::trace::CycleRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccelConfig {
    /// Mesh is `dim x dim`; scratchpad rows are `dim` elements wide.
    pub dim: usize,
    pub spad_rows: usize,
    pub acc_rows: usize,
    #[serde(skip)]
    pub policy: TagPolicy,
}

impl AccelConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            spad_rows: 1024,
            acc_rows: 256,
            policy: TagPolicy::Enforce,
        }
    }

    pub fn with_rows(mut self, spad_rows: usize, acc_rows: usize) -> Self {
        self.spad_rows = spad_rows;
        self.acc_rows = acc_rows;
        self
    }

    pub fn with_policy(mut self, policy: TagPolicy) -> Self {
        self.policy = policy;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    /// A command or one of its operands was tagged.
    Command,
    /// Two client domains met.
    Mixing,
    /// A memory or scratchpad address outside the configured range.
    OutOfRange,
    /// Malformed operands or a command issued in the wrong state.
    Invalid,
}

impl FaultKind {
    /// Faults raised by the information-flow policy itself.
    pub fn is_security(self) -> bool {
        matches!(self, FaultKind::Command | FaultKind::Mixing)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Inst,
    Rs1,
    Rs2,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Error)]
pub enum FaultDetail {
    #[error("{operand:?} carries tag {tag}")]
    TaggedOperand { operand: Operand, tag: Tag },
    #[error(transparent)]
    Mixing(#[from] MixingFault),
    #[error(transparent)]
    Memory(#[from] OutOfRange),
    #[error("rows [{start}, {start}+{rows}) outside {bank} depth {depth}")]
    Local {
        bank: &'static str,
        start: usize,
        rows: usize,
        depth: usize,
    },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Error)]
#[error("{kind:?} fault at cycle {cycle} (command {command}): {detail}")]
pub struct Fault {
    pub kind: FaultKind,
    pub cycle: u64,
    /// Index of the command being issued or executed.
    pub command: usize,
    pub detail: FaultDetail,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimStats {
    pub total_cycles: u64,
    pub commands: u64,
    pub mvin_count: u64,
    pub mvout_count: u64,
    pub preload_count: u64,
    pub compute_rows: u64,
    pub emitted_rows: u64,
    pub tag_registers_used: u64,
    pub per_pe_equivalent_registers: u64,
    pub bypasses: u64,
    pub refused_reads: u64,
}

impl fmt::Display for SimStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total_cycles: {}", self.total_cycles)?;
        writeln!(f, "commands: {}", self.commands)?;
        writeln!(f, "mvin_count: {}", self.mvin_count)?;
        writeln!(f, "mvout_count: {}", self.mvout_count)?;
        writeln!(f, "preload_count: {}", self.preload_count)?;
        writeln!(f, "compute_rows: {}", self.compute_rows)?;
        writeln!(f, "emitted_rows: {}", self.emitted_rows)?;
        writeln!(f, "tag_registers_used: {}", self.tag_registers_used)?;
        writeln!(f, "per_pe_equivalent_registers: {}", self.per_pe_equivalent_registers)?;
        writeln!(f, "scratchpad_bypasses: {}", self.bypasses)?;
        write!(f, "refused_reads: {}", self.refused_reads)
    }
}

/// What an observer without access to tagged data can see after a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SimObservation {
    /// Data of every word whose final tag is public.
    pub public_words: BTreeMap<u64, u64>,
    pub tag_map: Vec<Tag>,
    pub access_trace: AccessTrace,
    pub total_cycles: u64,
    pub fault: Option<Fault>,
}

impl SimObservation {
    pub fn from_memory(mem: &TaggedMemory, total_cycles: u64, fault: Option<Fault>) -> Self {
        let public_words = mem
            .words()
            .iter()
            .enumerate()
            .filter(|(_, w)| w.tag.is_public())
            .map(|(a, w)| (a as u64, w.data))
            .collect();
        Self {
            public_words,
            tag_map: mem.words().iter().map(|w| w.tag).collect(),
            access_trace: mem.trace().clone(),
            total_cycles,
            fault,
        }
    }
}

/// Result of executing a command sequence; the fault, if any, ended it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub stats: SimStats,
    pub fault: Option<Fault>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Settings {
    dataflow: Dataflow,
    activation: Activation,
    load_stride: u64,
    store_stride: u64,
    k: usize,
    n: usize,
    m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Bank {
    Spad = 0,
    Acc = 1,
}

const BANKS: [Bank; 2] = [Bank::Spad, Bank::Acc];

impl Bank {
    fn of(addr: LocalAddr) -> Bank {
        if addr.is_acc() {
            Bank::Acc
        } else {
            Bank::Spad
        }
    }

    fn name(self) -> &'static str {
        match self {
            Bank::Spad => "scratchpad",
            Bank::Acc => "accumulator",
        }
    }
}

#[derive(Default)]
struct Offers {
    reads: [Option<usize>; 2],
    writes: [Option<WriteRequest>; 2],
}

struct Tick {
    grants: [Grant; 2],
    responses: [SpadResponse; 2],
    emitted: Option<EmittedRow>,
}

/// Streams `count` consecutive rows out of one bank, or zero rows when the
/// address is [`LocalAddr::NONE`].
struct RowFetch {
    bank: Bank,
    base: usize,
    count: usize,
    requested: usize,
    zero_width: Option<usize>,
    ready: VecDeque<TaggedRow>,
    delivered: usize,
}

impl RowFetch {
    fn new(addr: LocalAddr, count: usize, width: usize) -> Self {
        let zero = addr.is_none();
        Self {
            bank: Bank::of(addr),
            base: addr.row(),
            count,
            requested: if zero { count } else { 0 },
            zero_width: zero.then_some(width),
            ready: VecDeque::new(),
            delivered: 0,
        }
    }

    fn wants_read(&self) -> bool {
        self.zero_width.is_none() && self.requested < self.count
    }

    fn available(&self) -> bool {
        self.zero_width.is_some() && self.delivered < self.count || !self.ready.is_empty()
    }

    fn pop(&mut self) -> Option<TaggedRow> {
        let row = match self.zero_width {
            Some(w) if self.delivered < self.count => Some(TaggedRow::zeroed(w)),
            Some(_) => None,
            None => self.ready.pop_front(),
        };
        if row.is_some() {
            self.delivered += 1;
        }
        row
    }

    fn done(&self) -> bool {
        self.delivered == self.count
    }
}

/// Arbitrates the reads of several fetches onto the two banks and routes
/// read responses back to the fetch that asked.
struct FetchGroup {
    fetches: Vec<RowFetch>,
    in_flight: [Option<usize>; 2],
}

impl FetchGroup {
    fn new(fetches: Vec<RowFetch>) -> Self {
        Self {
            fetches,
            in_flight: [None, None],
        }
    }

    /// Per bank, the fetch that is furthest behind gets the read port.
    fn plan(&self, offers: &mut Offers) -> [Option<usize>; 2] {
        let mut chosen = [None, None];
        for bank in BANKS {
            let pick = self
                .fetches
                .iter()
                .enumerate()
                .filter(|(_, f)| f.bank == bank && f.wants_read())
                .min_by_key(|(i, f)| (f.requested, *i))
                .map(|(i, _)| i);
            if let Some(i) = pick {
                let f = &self.fetches[i];
                offers.reads[bank as usize] = Some(f.base + f.requested);
            }
            chosen[bank as usize] = pick;
        }
        chosen
    }

    fn settle(&mut self, chosen: [Option<usize>; 2], tick: &Tick) {
        for bank in BANKS {
            let b = bank as usize;
            if let SpadResponse::ReadData(row) = &tick.responses[b] {
                let owner = self.in_flight[b].take().expect("read response without request");
                self.fetches[owner].ready.push_back(row.clone());
            }
            if tick.grants[b].read_accepted() {
                let i = chosen[b].expect("grant without offer");
                self.fetches[i].requested += 1;
                self.in_flight[b] = Some(i);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Controller {
    config: AccelConfig,
    spad: ScratchpadBank,
    acc: ScratchpadBank,
    mesh: Mesh,
    queue: VecDeque<Command>,
    issued: usize,
    executed: usize,
    cycle: u64,
    settings: Settings,
    stats: SimStats,
    halted: Option<Fault>,
    current: Option<CommandKind>,
    recorder: Option<Vec<CycleRecord>>,
}

impl Controller {
    pub fn new(config: AccelConfig) -> Self {
        assert!(config.dim >= 1, "mesh dimension must be positive");
        let mesh_cfg = MeshConfig::square(config.dim);
        let spad = ScratchpadBank::new(config.spad_rows, config.dim, ElemWidth::I8).with_policy(config.policy);
        let acc = ScratchpadBank::accumulator(config.acc_rows, config.dim).with_policy(config.policy);
        let stats = SimStats {
            tag_registers_used: mesh_cfg.tag_registers() as u64,
            per_pe_equivalent_registers: mesh_cfg.per_pe_tag_registers() as u64,
            ..SimStats::default()
        };
        Self {
            config,
            spad,
            acc,
            mesh: Mesh::with_policy(mesh_cfg, config.policy),
            queue: VecDeque::new(),
            issued: 0,
            executed: 0,
            cycle: 0,
            settings: Settings {
                dataflow: Dataflow::WeightStationary,
                activation: Activation::None,
                load_stride: 0,
                store_stride: 0,
                k: config.dim,
                n: config.dim,
                m: config.dim,
            },
            stats,
            halted: None,
            current: None,
            recorder: None,
        }
    }

    /// Record one [`CycleRecord`] per simulated cycle from now on.
    pub fn enable_recording(&mut self) {
        self.recorder.get_or_insert_with(Vec::new);
    }

    pub fn take_records(&mut self) -> Vec<CycleRecord> {
        self.recorder.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn config(&self) -> AccelConfig {
        self.config
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            total_cycles: self.cycle,
            bypasses: self.spad.counters().bypasses + self.acc.counters().bypasses,
            refused_reads: self.spad.counters().refused_reads + self.acc.counters().refused_reads,
            emitted_rows: self.mesh.emitted_rows() as u64,
            ..self.stats
        }
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.halted.as_ref()
    }

    pub fn scratchpad(&self) -> &ScratchpadBank {
        &self.spad
    }

    pub fn accumulator(&self) -> &ScratchpadBank {
        &self.acc
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Accept a command into the in-order queue. Any tagged part of the
    /// command rejects it, and a rejected command leaves no trace.
    pub fn issue(&self, cmd: &Command) -> Result<(), Fault> {
        let tagged = [
            (Operand::Inst, cmd.inst_tag),
            (Operand::Rs1, cmd.rs1.tag),
            (Operand::Rs2, cmd.rs2.tag),
        ]
        .into_iter()
        .find(|(_, t)| t.is_blinded());
        match tagged {
            Some((operand, tag)) => Err(Fault {
                kind: FaultKind::Command,
                cycle: self.cycle,
                command: self.issued,
                detail: FaultDetail::TaggedOperand { operand, tag },
            }),
            None => Ok(()),
        }
    }

    /// [`Self::issue`] and, if accepted, enqueue.
    pub fn submit(&mut self, cmd: Command) -> Result<(), Fault> {
        if let Some(f) = &self.halted {
            return Err(f.clone());
        }
        self.issue(&cmd)?;
        self.queue.push_back(cmd);
        self.issued += 1;
        Ok(())
    }

    /// Execute queued commands until the queue is empty or a fault halts
    /// the accelerator.
    pub fn drain(&mut self, mem: &mut TaggedMemory) -> Result<(), Fault> {
        if let Some(f) = &self.halted {
            return Err(f.clone());
        }
        while let Some(cmd) = self.queue.pop_front() {
            self.current = Some(cmd.kind);
            let result = self.execute(&cmd, mem);
            self.current = None;
            self.executed += 1;
            self.stats.commands += 1;
            if let Err(f) = result {
                self.queue.clear();
                self.halted = Some(f.clone());
                return Err(f);
            }
        }
        Ok(())
    }

    /// Issue and execute each command in turn, stopping at the first fault.
    pub fn run(&mut self, commands: &[Command], mem: &mut TaggedMemory) -> Execution {
        let mut fault = None;
        for cmd in commands {
            let step = self.submit(*cmd).and_then(|()| self.drain(mem));
            if let Err(f) = step {
                self.halted.get_or_insert_with(|| f.clone());
                fault = Some(f);
                break;
            }
        }
        Execution {
            stats: self.stats(),
            fault,
        }
    }

    fn raise(&self, kind: FaultKind, detail: impl Into<FaultDetail>) -> Fault {
        Fault {
            kind,
            cycle: self.cycle,
            command: self.executed,
            detail: detail.into(),
        }
    }

    fn invalid(&self, msg: impl fmt::Display) -> Fault {
        self.raise(FaultKind::Invalid, FaultDetail::Invalid(msg.to_string()))
    }

    fn mesh_fault(&self, err: MeshError) -> Fault {
        match err {
            MeshError::Mixing(m) => self.raise(FaultKind::Mixing, m),
            other => self.invalid(other),
        }
    }

    fn bank(&self, bank: Bank) -> &ScratchpadBank {
        match bank {
            Bank::Spad => &self.spad,
            Bank::Acc => &self.acc,
        }
    }

    fn bank_mut(&mut self, bank: Bank) -> &mut ScratchpadBank {
        match bank {
            Bank::Spad => &mut self.spad,
            Bank::Acc => &mut self.acc,
        }
    }

    fn banks_idle(&self) -> bool {
        self.spad.is_idle() && self.acc.is_idle()
    }

    fn check_local(&self, addr: LocalAddr, rows: usize) -> Result<(), Fault> {
        if addr.is_none() {
            return Ok(());
        }
        let bank = Bank::of(addr);
        let depth = self.bank(bank).depth();
        if addr.row() + rows > depth {
            return Err(self.raise(
                FaultKind::OutOfRange,
                FaultDetail::Local {
                    bank: bank.name(),
                    start: addr.row(),
                    rows,
                    depth,
                },
            ));
        }
        if addr.accumulate() && bank != Bank::Acc {
            return Err(self.invalid("accumulate flag on a scratchpad address"));
        }
        Ok(())
    }

    fn check_mem(&self, mem: &TaggedMemory, base: u64, stride: u64, rows: usize, words: usize) -> Result<(), Fault> {
        for r in 0..rows as u64 {
            let addr = r
                .checked_mul(stride)
                .and_then(|o| base.checked_add(o))
                .unwrap_or(u64::MAX);
            let oob = OutOfRange {
                addr,
                len: words as u64,
                size: mem.size(),
            };
            match addr.checked_add(words as u64) {
                Some(end) if end <= mem.size() => {}
                _ => return Err(self.raise(FaultKind::OutOfRange, oob)),
            }
        }
        Ok(())
    }

    /// One clock cycle: banks arbitrate and step, then the mesh steps.
    fn tick(&mut self, offers: Offers) -> Result<Tick, Fault> {
        let Offers { reads, writes } = offers;
        let mut grants = [Grant::None; 2];
        for (bank, write) in BANKS.into_iter().zip(writes) {
            let read = reads[bank as usize];
            grants[bank as usize] = self
                .bank_mut(bank)
                .arbitrate(read, write)
                .map_err(|e: SpadError| self.invalid(e))?;
        }
        let responses = [self.spad.step(), self.acc.step()];
        for r in &responses {
            if let SpadResponse::Fault { fault, .. } = r {
                return Err(self.raise(FaultKind::Mixing, *fault));
            }
        }
        let emitted = self.mesh.step();
        if let Some(rec) = self.recorder.as_mut() {
            rec.push(CycleRecord {
                cycle: self.cycle,
                command: self.executed,
                kind: self.current,
                occupancy: self.mesh.occupancy(),
                tag_queue: self.mesh.tag_queue_contents(),
                emitted: emitted.as_ref().map(|e| (e.source, e.row.tag)),
            });
        }
        self.cycle += 1;
        Ok(Tick {
            grants,
            responses,
            emitted,
        })
    }

    fn execute(&mut self, cmd: &Command, mem: &mut TaggedMemory) -> Result<(), Fault> {
        let op = Op::decode(cmd).map_err(|e| self.raise(FaultKind::Invalid, e))?;
        match op {
            Op::Config {
                dataflow,
                activation,
                load_stride,
                store_stride,
                k,
                n,
                m,
            } => {
                self.mesh
                    .reconfigure(dataflow, activation)
                    .map_err(|e| self.mesh_fault(e))?;
                self.settings = Settings {
                    dataflow,
                    activation,
                    load_stride: load_stride as u64,
                    store_stride: store_stride as u64,
                    k: k as usize,
                    n: n as usize,
                    m: m as usize,
                };
                let regs = self.mesh.config().tag_registers() as u64;
                self.stats.tag_registers_used = self.stats.tag_registers_used.max(regs);
                self.tick(Offers::default())?;
                Ok(())
            }
            Op::Mvin {
                mem_addr,
                local,
                rows,
                cols,
            } => self.exec_mvin(mem, mem_addr, local, rows as usize, cols as usize),
            Op::Mvout {
                mem_addr,
                local,
                rows,
                narrow,
            } => self.exec_mvout(mem, mem_addr, local, rows as usize, narrow),
            Op::Preload { local, rows } => self.exec_preload(local, rows as usize),
            Op::Compute { a, streamed, dest } => match self.settings.dataflow {
                Dataflow::WeightStationary => self.exec_compute_ws(a, streamed, dest),
                Dataflow::OutputStationary => self.exec_compute_os(a, streamed, dest),
            },
        }
    }

    fn exec_mvin(
        &mut self,
        mem: &mut TaggedMemory,
        mem_addr: u64,
        local: LocalAddr,
        rows: usize,
        cols: usize,
    ) -> Result<(), Fault> {
        let dim = self.config.dim;
        let cols = if cols == 0 { dim } else { cols };
        if cols > dim {
            return Err(self.invalid(format!("MVIN of {cols} columns into {dim}-wide rows")));
        }
        if local.is_none() {
            return Err(self.invalid("MVIN needs a destination"));
        }
        self.check_local(local, rows)?;
        let bank = Bank::of(local);
        let width = self.bank(bank).elem_width();
        let words = width.words_for(cols);
        let stride = self.settings.load_stride;
        self.check_mem(mem, mem_addr, stride, rows, words)?;
        self.stats.mvin_count += 1;

        let policy = self.config.policy;
        let mut next = 0;
        let mut dma_free_at = self.cycle;
        let mut loaded: VecDeque<(u64, usize, TaggedRow)> = VecDeque::new();
        loop {
            let now = self.cycle;
            if next < rows && dma_free_at <= now {
                let addr = mem_addr + next as u64 * stride;
                let row = memory::dma_load_row(mem, addr, cols, width, now, policy).map_err(|e| match e {
                    DmaError::Mixing(m) => self.raise(FaultKind::Mixing, m),
                    DmaError::OutOfRange(o) => self.raise(FaultKind::OutOfRange, o),
                })?;
                dma_free_at = now + words as u64;
                loaded.push_back((dma_free_at, next, row));
                next += 1;
            }
            let mut offers = Offers::default();
            if loaded.front().is_some_and(|(at, _, _)| *at <= now) {
                let (_, r, mut row) = loaded.pop_front().expect("front checked");
                let target = local.row() + r;
                row.elems.resize(dim, 0);
                let mut req = if cols == dim {
                    WriteRequest::full(target, row)
                } else {
                    let mask = (0..dim).map(|i| i < cols).collect();
                    WriteRequest::masked(target, row, mask)
                };
                req.accumulate = local.accumulate();
                offers.writes[bank as usize] = Some(req);
            }
            self.tick(offers)?;
            if next == rows && loaded.is_empty() && self.banks_idle() {
                return Ok(());
            }
        }
    }

    fn exec_mvout(
        &mut self,
        mem: &mut TaggedMemory,
        mem_addr: u64,
        local: LocalAddr,
        rows: usize,
        narrow: bool,
    ) -> Result<(), Fault> {
        if local.is_none() {
            return Err(self.invalid("MVOUT needs a source"));
        }
        if local.accumulate() {
            return Err(self.invalid("accumulate flag on an MVOUT source"));
        }
        self.check_local(local, rows)?;
        let dim = self.config.dim;
        let bank = Bank::of(local);
        let out_width = if narrow {
            ElemWidth::I8
        } else {
            self.bank(bank).elem_width()
        };
        let words = out_width.words_for(dim);
        let stride = self.settings.store_stride;
        self.check_mem(mem, mem_addr, stride, rows, words)?;
        self.stats.mvout_count += 1;

        let mut fetch = FetchGroup::new(vec![RowFetch::new(local, rows, dim)]);
        let mut stored = 0;
        let mut dma_free_at = self.cycle;
        loop {
            let now = self.cycle;
            if dma_free_at <= now {
                if let Some(mut row) = fetch.fetches[0].pop() {
                    for x in &mut row.elems {
                        *x = out_width.saturate(*x);
                    }
                    let addr = mem_addr + stored as u64 * stride;
                    memory::dma_store_row(mem, addr, &row, out_width, now)
                        .map_err(|o| self.raise(FaultKind::OutOfRange, o))?;
                    dma_free_at = now + words as u64;
                    stored += 1;
                }
            }
            if stored == rows && dma_free_at <= now {
                return Ok(());
            }
            let mut offers = Offers::default();
            let chosen = fetch.plan(&mut offers);
            let tick = self.tick(offers)?;
            fetch.settle(chosen, &tick);
        }
    }

    fn exec_preload(&mut self, local: LocalAddr, rows: usize) -> Result<(), Fault> {
        let dim = self.config.dim;
        if rows > dim {
            return Err(self.invalid(format!("PRELOAD of {rows} rows into a {dim}-row mesh")));
        }
        if local.accumulate() {
            return Err(self.invalid("accumulate flag on a PRELOAD source"));
        }
        self.check_local(local, rows)?;
        self.stats.preload_count += 1;
        let mut fetch = FetchGroup::new(vec![RowFetch::new(local, rows, dim)]);
        let mut stationary = Vec::with_capacity(rows);
        loop {
            while let Some(row) = fetch.fetches[0].pop() {
                stationary.push(row);
            }
            if fetch.fetches[0].done() {
                break;
            }
            let mut offers = Offers::default();
            let chosen = fetch.plan(&mut offers);
            let tick = self.tick(offers)?;
            fetch.settle(chosen, &tick);
        }
        self.mesh.preload(&stationary).map_err(|e| self.mesh_fault(e))?;
        // Shifting the stationary operand into the array takes one cycle per row.
        for _ in 0..dim {
            self.tick(Offers::default())?;
        }
        Ok(())
    }

    fn check_dest(&self, dest: LocalAddr, rows: usize) -> Result<(), Fault> {
        self.check_local(dest, rows)?;
        if dest.accumulate() && Bank::of(dest) != Bank::Acc {
            return Err(self.invalid("accumulate flag on a scratchpad destination"));
        }
        Ok(())
    }

    fn output_write(&self, dest: LocalAddr, index: usize, row: TaggedRow) -> Option<(Bank, WriteRequest)> {
        if dest.is_none() {
            return None;
        }
        let mut req = WriteRequest::full(dest.row() + index, row);
        req.accumulate = dest.accumulate();
        Some((Bank::of(dest), req))
    }

    fn exec_compute_ws(&mut self, a: LocalAddr, d: LocalAddr, dest: LocalAddr) -> Result<(), Fault> {
        let dim = self.config.dim;
        let k = self.settings.k;
        if a.is_none() {
            return Err(self.invalid("COMPUTE needs an A operand"));
        }
        if a.accumulate() || d.accumulate() {
            return Err(self.invalid("accumulate flag on a COMPUTE source"));
        }
        self.check_local(a, k)?;
        self.check_local(d, k)?;
        self.check_dest(dest, k)?;
        if !self.mesh.is_preloaded() {
            return Err(self.mesh_fault(MeshError::NotPreloaded));
        }
        self.stats.compute_rows += k as u64;

        let mut fetch = FetchGroup::new(vec![RowFetch::new(a, k, dim), RowFetch::new(d, k, dim)]);
        let mut outputs: VecDeque<(usize, TaggedRow)> = VecDeque::new();
        let (mut emitted, mut written) = (0, 0);
        loop {
            if fetch.fetches[0].available() && fetch.fetches[1].available() {
                let a_row = fetch.fetches[0].pop().expect("available");
                let d_row = fetch.fetches[1].pop().expect("available");
                self.mesh.feed_row(&a_row, &d_row).map_err(|e| self.mesh_fault(e))?;
            }
            let mut offers = Offers::default();
            let chosen = fetch.plan(&mut offers);
            let pending_write = outputs
                .front()
                .cloned()
                .and_then(|(i, row)| self.output_write(dest, i, row));
            if let Some((bank, req)) = pending_write {
                offers.writes[bank as usize] = Some(req);
            } else if !outputs.is_empty() {
                // discarded output
                outputs.pop_front();
                written += 1;
            }
            let tick = self.tick(offers)?;
            fetch.settle(chosen, &tick);
            if tick.grants.iter().any(|g| g.write_accepted()) {
                outputs.pop_front();
                written += 1;
            }
            // Rows leave in feed order.
            if let Some(e) = tick.emitted {
                outputs.push_back((emitted, e.row));
                emitted += 1;
            }
            if written == k && fetch.fetches.iter().all(RowFetch::done) && self.banks_idle() && self.mesh.is_idle() {
                return Ok(());
            }
        }
    }

    fn exec_compute_os(&mut self, a: LocalAddr, b: LocalAddr, dest: LocalAddr) -> Result<(), Fault> {
        let dim = self.config.dim;
        let (k, n) = (self.settings.k, self.settings.n);
        if k > dim || n == 0 || n > dim {
            return Err(self.invalid(format!(
                "output-stationary COMPUTE needs k <= {dim} and 1 <= n <= {dim}, got k={k} n={n}"
            )));
        }
        if a.accumulate() || b.accumulate() {
            return Err(self.invalid("accumulate flag on a COMPUTE source"));
        }
        self.check_local(a, k)?;
        self.check_local(b, n)?;
        self.check_dest(dest, k)?;
        if !self.mesh.is_preloaded() {
            return Err(self.mesh_fault(MeshError::NotPreloaded));
        }
        self.stats.compute_rows += k as u64;

        // Gather operands, then stream them without gaps.
        let mut fetch = FetchGroup::new(vec![RowFetch::new(a, k, dim), RowFetch::new(b, n, dim)]);
        let (mut a_rows, mut b_rows) = (Vec::with_capacity(k), Vec::with_capacity(n));
        loop {
            while let Some(r) = fetch.fetches[0].pop() {
                a_rows.push(r);
            }
            while let Some(r) = fetch.fetches[1].pop() {
                b_rows.push(r);
            }
            if fetch.fetches.iter().all(RowFetch::done) {
                break;
            }
            let mut offers = Offers::default();
            let chosen = fetch.plan(&mut offers);
            let tick = self.tick(offers)?;
            fetch.settle(chosen, &tick);
        }
        let a_tags: Vec<Tag> = a_rows.iter().map(|r| r.tag).collect();
        self.mesh.begin_stream(&a_tags, n).map_err(|e| self.mesh_fault(e))?;

        let mut step = 0;
        let mut outputs: VecDeque<(usize, TaggedRow)> = VecDeque::new();
        let mut written = 0;
        loop {
            if step < n {
                let column: Vec<i32> = a_rows.iter().map(|r| r.elems[step]).collect();
                self.mesh
                    .feed_stream(&column, &b_rows[step])
                    .map_err(|e| self.mesh_fault(e))?;
                step += 1;
            }
            let mut offers = Offers::default();
            let pending_write = outputs
                .front()
                .cloned()
                .and_then(|(i, row)| self.output_write(dest, i, row));
            if let Some((bank, req)) = pending_write {
                offers.writes[bank as usize] = Some(req);
            } else if !outputs.is_empty() {
                outputs.pop_front();
                written += 1;
            }
            let tick = self.tick(offers)?;
            if tick.grants.iter().any(|g| g.write_accepted()) {
                outputs.pop_front();
                written += 1;
            }
            if let Some(e) = tick.emitted {
                outputs.push_back((e.source, e.row));
            }
            if written == k && step == n && self.banks_idle() && self.mesh.is_idle() {
                return Ok(());
            }
        }
    }
}

/// Run a command sequence against `mem` on a fresh accelerator.
pub fn simulate(config: AccelConfig, commands: &[Command], mem: &mut TaggedMemory) -> (SimObservation, SimStats) {
    let mut ctl = Controller::new(config);
    let exec = ctl.run(commands, mem);
    let obs = SimObservation::from_memory(mem, exec.stats.total_cycles, exec.fault);
    (obs, exec.stats)
}

/// Like [`simulate`], but a fault is returned as the error.
pub fn run(
    config: AccelConfig,
    commands: &[Command],
    mem: &mut TaggedMemory,
) -> Result<(SimObservation, SimStats), Fault> {
    let (obs, stats) = simulate(config, commands, mem);
    match obs.fault.clone() {
        Some(f) => Err(f),
        None => Ok((obs, stats)),
    }
}
