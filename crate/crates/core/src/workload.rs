//! Workload files: accelerator configuration, an initial memory image, a
//! command list, and optionally the memory contents expected afterwards.
//!
//! The format is TOML. Data words are hex strings, addresses and tags are
//! decimal. A memory record may give one word or a run of consecutive words
//! sharing a tag:
//!
//! ```toml
//! memory = [
//!   { addr = 0, data = "0x0000000000000201", tag = 5 },
//!   { addr = 1, data = ["0x0403", "0x0000000000000000"], tag = 0 },
//! ]
//!
//! [config]
//! dim = 2
//! spad_rows = 64
//! acc_rows = 64
//! memory_words = 16
//!
//! [[command]]
//! op = "mvin"
//! mem_addr = 0
//! local = "spad:0"
//! rows = 2
//! ```
//!
//! Commands are written by name (`config`, `mvin`, `mvout`, `preload`,
//! `compute`) or as `raw` with explicit `kind`, `rs1` and `rs2`. Any command
//! may carry `inst_tag`, `rs1_tag` and `rs2_tag`. Unknown keys are errors.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::command::{Command, CommandKind, LocalAddr, Op};
use crate::controller::AccelConfig;
use crate::memory::{OutOfRange, TaggedMemory, TaggedWord};
use crate::mesh::{Activation, Dataflow};
use crate::tag::Tag;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("command {index} ({op}): {msg}")]
    Command { index: usize, op: String, msg: String },
    #[error("bad hex word {0:?}")]
    Hex(String),
    #[error("bad local address {0:?}")]
    Local(String),
    #[error("memory record at {addr}: {source}")]
    Memory { addr: u64, source: OutOfRange },
    #[error("invalid config: {0}")]
    Config(String),
}

/// A run of consecutive words sharing one tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemRecord {
    pub addr: u64,
    pub data: Vec<u64>,
    pub tag: Tag,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mismatch {
    pub addr: u64,
    pub expected: TaggedWord,
    pub actual: TaggedWord,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    pub config: AccelConfig,
    pub memory_words: usize,
    pub memory: Vec<MemRecord>,
    pub commands: Vec<Command>,
    pub expected: Option<Vec<MemRecord>>,
}

impl Workload {
    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let file: FileRepr = toml::from_str(text)?;
        file.into_workload()
    }

    /// Initial memory with every record applied.
    pub fn build_memory(&self) -> Result<TaggedMemory, WorkloadError> {
        let mut mem = TaggedMemory::new(self.memory_words);
        apply_records(&mut mem, &self.memory)?;
        Ok(mem)
    }

    /// Words whose final data or tag differ from `expected`.
    pub fn check_expected(&self, mem: &TaggedMemory) -> Vec<Mismatch> {
        let Some(expected) = &self.expected else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for rec in expected {
            for (i, &data) in rec.data.iter().enumerate() {
                let addr = rec.addr + i as u64;
                let expected = TaggedWord::new(data, rec.tag);
                let actual = mem.get(addr).unwrap_or_default();
                if actual != expected {
                    out.push(Mismatch { addr, expected, actual });
                }
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        write_records(&mut s, "memory", &self.memory);
        if let Some(expected) = &self.expected {
            write_records(&mut s, "expected", expected);
        }
        s.push('\n');
        let c = &self.config;
        writeln!(s, "[config]").unwrap();
        writeln!(s, "dim = {}", c.dim).unwrap();
        writeln!(s, "spad_rows = {}", c.spad_rows).unwrap();
        writeln!(s, "acc_rows = {}", c.acc_rows).unwrap();
        writeln!(s, "memory_words = {}", self.memory_words).unwrap();
        for cmd in &self.commands {
            s.push('\n');
            write_command(&mut s, cmd);
        }
        s
    }
}

pub fn apply_records(mem: &mut TaggedMemory, records: &[MemRecord]) -> Result<(), WorkloadError> {
    for rec in records {
        for (i, &data) in rec.data.iter().enumerate() {
            let addr = rec.addr + i as u64;
            mem.poke(addr, TaggedWord::new(data, rec.tag))
                .map_err(|source| WorkloadError::Memory { addr, source })?;
        }
    }
    Ok(())
}

fn hex(word: u64) -> String {
    format!("0x{word:016x}")
}

fn write_records(s: &mut String, key: &str, records: &[MemRecord]) {
    writeln!(s, "{key} = [").unwrap();
    for r in records {
        let data = match r.data.as_slice() {
            [one] => format!("\"{}\"", hex(*one)),
            many => {
                let items: Vec<String> = many.iter().map(|w| format!("\"{}\"", hex(*w))).collect();
                format!("[{}]", items.join(", "))
            }
        };
        writeln!(s, "  {{ addr = {}, data = {}, tag = {} }},", r.addr, data, r.tag).unwrap();
    }
    writeln!(s, "]").unwrap();
}

fn dataflow_name(d: Dataflow) -> &'static str {
    match d {
        Dataflow::WeightStationary => "weight_stationary",
        Dataflow::OutputStationary => "output_stationary",
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::None => "none",
        Activation::Relu => "relu",
    }
}

fn kind_name(k: CommandKind) -> &'static str {
    match k {
        CommandKind::Config => "config",
        CommandKind::Mvin => "mvin",
        CommandKind::Mvout => "mvout",
        CommandKind::Preload => "preload",
        CommandKind::Compute => "compute",
    }
}

fn write_command(s: &mut String, cmd: &Command) {
    writeln!(s, "[[command]]").unwrap();
    match Op::decode(cmd) {
        Ok(op) => {
            writeln!(s, "op = \"{}\"", kind_name(op.kind())).unwrap();
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
                    writeln!(s, "dataflow = \"{}\"", dataflow_name(dataflow)).unwrap();
                    writeln!(s, "activation = \"{}\"", activation_name(activation)).unwrap();
                    writeln!(s, "load_stride = {load_stride}").unwrap();
                    writeln!(s, "store_stride = {store_stride}").unwrap();
                    writeln!(s, "k = {k}\nn = {n}\nm = {m}").unwrap();
                }
                Op::Mvin {
                    mem_addr,
                    local,
                    rows,
                    cols,
                } => {
                    writeln!(s, "mem_addr = {mem_addr}\nlocal = \"{local}\"\nrows = {rows}").unwrap();
                    if cols != 0 {
                        writeln!(s, "cols = {cols}").unwrap();
                    }
                }
                Op::Mvout {
                    mem_addr,
                    local,
                    rows,
                    narrow,
                } => {
                    writeln!(s, "mem_addr = {mem_addr}\nlocal = \"{local}\"\nrows = {rows}").unwrap();
                    if narrow {
                        writeln!(s, "narrow = true").unwrap();
                    }
                }
                Op::Preload { local, rows } => {
                    writeln!(s, "local = \"{local}\"\nrows = {rows}").unwrap();
                }
                Op::Compute { a, streamed, dest } => {
                    writeln!(s, "a = \"{a}\"\nstreamed = \"{streamed}\"\ndest = \"{dest}\"").unwrap();
                }
            }
        }
        Err(_) => {
            writeln!(s, "op = \"raw\"\nkind = \"{}\"", kind_name(cmd.kind)).unwrap();
            writeln!(s, "rs1 = \"{}\"\nrs2 = \"{}\"", hex(cmd.rs1.data), hex(cmd.rs2.data)).unwrap();
        }
    }
    for (key, tag) in [
        ("inst_tag", cmd.inst_tag),
        ("rs1_tag", cmd.rs1.tag),
        ("rs2_tag", cmd.rs2.tag),
    ] {
        if tag.is_blinded() {
            writeln!(s, "{key} = {tag}").unwrap();
        }
    }
}

pub fn parse_hex(s: &str) -> Result<u64, WorkloadError> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| WorkloadError::Hex(s.to_string()))?;
    u64::from_str_radix(&digits.replace('_', ""), 16).map_err(|_| WorkloadError::Hex(s.to_string()))
}

/// `spad:<row>`, `acc:<row>`, `acc+:<row>` (accumulate) or `none`.
pub fn parse_local(s: &str) -> Result<LocalAddr, WorkloadError> {
    let err = || WorkloadError::Local(s.to_string());
    if s == "none" {
        return Ok(LocalAddr::NONE);
    }
    let (bank, row) = s.split_once(':').ok_or_else(err)?;
    let row: u32 = row.trim().parse().map_err(|_| err())?;
    if row >= 1 << 30 {
        return Err(err());
    }
    match bank.trim() {
        "spad" => Ok(LocalAddr::spad(row)),
        "acc" => Ok(LocalAddr::acc(row)),
        "acc+" => Ok(LocalAddr::acc(row).accumulating()),
        _ => Err(err()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    config: ConfigRepr,
    #[serde(default)]
    memory: Vec<RecordRepr>,
    #[serde(default)]
    expected: Option<Vec<RecordRepr>>,
    #[serde(default)]
    command: Vec<CommandRepr>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigRepr {
    dim: usize,
    spad_rows: usize,
    acc_rows: usize,
    memory_words: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DataRepr {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRepr {
    addr: u64,
    data: DataRepr,
    tag: u8,
}

impl RecordRepr {
    fn into_record(self) -> Result<MemRecord, WorkloadError> {
        let data = match self.data {
            DataRepr::One(s) => vec![parse_hex(&s)?],
            DataRepr::Many(v) => v.iter().map(|s| parse_hex(s)).collect::<Result<_, _>>()?,
        };
        Ok(MemRecord {
            addr: self.addr,
            data,
            tag: Tag::new(self.tag),
        })
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum OpName {
    Config,
    Mvin,
    Mvout,
    Preload,
    Compute,
    Raw,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandRepr {
    op: OpName,
    #[serde(default)]
    inst_tag: u8,
    #[serde(default)]
    rs1_tag: u8,
    #[serde(default)]
    rs2_tag: u8,
    dataflow: Option<Dataflow>,
    activation: Option<Activation>,
    load_stride: Option<u16>,
    store_stride: Option<u16>,
    k: Option<u16>,
    n: Option<u16>,
    m: Option<u16>,
    mem_addr: Option<u64>,
    local: Option<String>,
    rows: Option<u16>,
    cols: Option<u16>,
    narrow: Option<bool>,
    a: Option<String>,
    streamed: Option<String>,
    dest: Option<String>,
    kind: Option<CommandKind>,
    rs1: Option<String>,
    rs2: Option<String>,
}

impl CommandRepr {
    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! check {
            ($($f:ident),*) => { $( if self.$f.is_some() { v.push(stringify!($f)); } )* };
        }
        check!(
            dataflow,
            activation,
            load_stride,
            store_stride,
            k,
            n,
            m,
            mem_addr,
            local,
            rows,
            cols,
            narrow,
            a,
            streamed,
            dest,
            kind,
            rs1,
            rs2
        );
        v
    }

    fn into_command(self, index: usize) -> Result<Command, WorkloadError> {
        let op_name = match self.op {
            OpName::Config => "config",
            OpName::Mvin => "mvin",
            OpName::Mvout => "mvout",
            OpName::Preload => "preload",
            OpName::Compute => "compute",
            OpName::Raw => "raw",
        };
        let fail = |msg: String| WorkloadError::Command {
            index,
            op: op_name.to_string(),
            msg,
        };
        let allowed: &[&str] = match self.op {
            OpName::Config => &["dataflow", "activation", "load_stride", "store_stride", "k", "n", "m"],
            OpName::Mvin => &["mem_addr", "local", "rows", "cols"],
            OpName::Mvout => &["mem_addr", "local", "rows", "narrow"],
            OpName::Preload => &["local", "rows"],
            OpName::Compute => &["a", "streamed", "dest"],
            OpName::Raw => &["kind", "rs1", "rs2"],
        };
        if let Some(bad) = self.present().into_iter().find(|f| !allowed.contains(f)) {
            return Err(fail(format!("field `{bad}` does not apply")));
        }
        let need = |v: Option<u64>, name: &str| v.ok_or_else(|| fail(format!("missing `{name}`")));
        let local = |v: &Option<String>, name: &str| -> Result<LocalAddr, WorkloadError> {
            match v {
                Some(s) => parse_local(s),
                None => Err(fail(format!("missing `{name}`"))),
            }
        };
        let cmd = match self.op {
            OpName::Config => Op::Config {
                dataflow: self.dataflow.unwrap_or_default(),
                activation: self.activation.unwrap_or_default(),
                load_stride: self.load_stride.unwrap_or(0),
                store_stride: self.store_stride.unwrap_or(0),
                k: self.k.ok_or_else(|| fail("missing `k`".into()))?,
                n: self.n.ok_or_else(|| fail("missing `n`".into()))?,
                m: self.m.ok_or_else(|| fail("missing `m`".into()))?,
            }
            .encode(),
            OpName::Mvin => Op::Mvin {
                mem_addr: need(self.mem_addr, "mem_addr")?,
                local: local(&self.local, "local")?,
                rows: self.rows.ok_or_else(|| fail("missing `rows`".into()))?,
                cols: self.cols.unwrap_or(0),
            }
            .encode(),
            OpName::Mvout => Op::Mvout {
                mem_addr: need(self.mem_addr, "mem_addr")?,
                local: local(&self.local, "local")?,
                rows: self.rows.ok_or_else(|| fail("missing `rows`".into()))?,
                narrow: self.narrow.unwrap_or(false),
            }
            .encode(),
            OpName::Preload => Op::Preload {
                local: local(&self.local, "local")?,
                rows: self.rows.ok_or_else(|| fail("missing `rows`".into()))?,
            }
            .encode(),
            OpName::Compute => Op::Compute {
                a: local(&self.a, "a")?,
                streamed: self
                    .streamed
                    .as_deref()
                    .map(parse_local)
                    .transpose()?
                    .unwrap_or(LocalAddr::NONE),
                dest: local(&self.dest, "dest")?,
            }
            .encode(),
            OpName::Raw => {
                let kind = self.kind.ok_or_else(|| fail("missing `kind`".into()))?;
                let word = |v: &Option<String>| v.as_deref().map(parse_hex).transpose();
                Command::new(kind, word(&self.rs1)?.unwrap_or(0), word(&self.rs2)?.unwrap_or(0))
            }
        };
        Ok(cmd.with_tags(Tag::new(self.inst_tag), Tag::new(self.rs1_tag), Tag::new(self.rs2_tag)))
    }
}

impl FileRepr {
    fn into_workload(self) -> Result<Workload, WorkloadError> {
        let c = self.config;
        if c.dim == 0 || c.dim > 256 {
            return Err(WorkloadError::Config(format!("dim {} not in 1..=256", c.dim)));
        }
        let config = AccelConfig::new(c.dim).with_rows(c.spad_rows, c.acc_rows);
        let memory = self
            .memory
            .into_iter()
            .map(RecordRepr::into_record)
            .collect::<Result<_, _>>()?;
        let expected = self
            .expected
            .map(|v| v.into_iter().map(RecordRepr::into_record).collect())
            .transpose()?;
        let commands = self
            .command
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.into_command(i))
            .collect::<Result<_, _>>()?;
        let w = Workload {
            config,
            memory_words: c.memory_words,
            memory,
            commands,
            expected,
        };
        w.build_memory()?;
        Ok(w)
    }
}
