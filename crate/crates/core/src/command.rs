//! Accelerator commands: an opcode plus two 64-bit register operands, each
//! operand carrying the tag of the CPU register it came from.
//!
//! Operand layouts (bit ranges inclusive):
//!
//! | kind    | rs1                                              | rs2                                          |
//! |---------|--------------------------------------------------|----------------------------------------------|
//! | CONFIG  | 0 dataflow, 1..2 activation, 16..31 load stride, 32..47 store stride | 0..15 K, 16..31 N, 32..47 M |
//! | MVIN    | memory word address                              | 0..31 local addr, 32..47 rows, 48..63 cols   |
//! | MVOUT   | memory word address                              | 0..31 local addr, 32..47 rows, 48 narrow     |
//! | PRELOAD | 0..31 local addr, 32..47 rows                    | unused, zero                                 |
//! | COMPUTE | 0..31 A addr, 32..63 D addr (WS) or B addr (OS)  | 0..31 destination addr                       |
//!
//! Strides are in memory words. A column count of zero means full width.
//! Unused bits must be zero.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::TaggedWord;
use crate::mesh::{Activation, Dataflow};
use crate::tag::Tag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Config,
    Mvin,
    Mvout,
    Preload,
    Compute,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Config => "CONFIG",
            CommandKind::Mvin => "MVIN",
            CommandKind::Mvout => "MVOUT",
            CommandKind::Preload => "PRELOAD",
            CommandKind::Compute => "COMPUTE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Command {
    pub kind: CommandKind,
    pub inst_tag: Tag,
    pub rs1: TaggedWord,
    pub rs2: TaggedWord,
}

impl Command {
    pub fn new(kind: CommandKind, rs1: u64, rs2: u64) -> Self {
        Self {
            kind,
            inst_tag: Tag::PUBLIC,
            rs1: TaggedWord::public(rs1),
            rs2: TaggedWord::public(rs2),
        }
    }

    pub fn with_tags(mut self, inst: Tag, rs1: Tag, rs2: Tag) -> Self {
        self.inst_tag = inst;
        self.rs1.tag = rs1;
        self.rs2.tag = rs2;
        self
    }
}

/// Scratchpad-side address. Bit 31 selects the accumulator bank, bit 30
/// requests accumulation on writes, and all-ones means "no operand" (reads
/// as zeros).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalAddr(u32);

impl LocalAddr {
    const ACC_BIT: u32 = 1 << 31;
    const ACCUMULATE_BIT: u32 = 1 << 30;
    const ROW_MASK: u32 = Self::ACCUMULATE_BIT - 1;
    pub const NONE: LocalAddr = LocalAddr(u32::MAX);

    pub fn spad(row: u32) -> Self {
        assert!(row <= Self::ROW_MASK);
        LocalAddr(row)
    }

    pub fn acc(row: u32) -> Self {
        assert!(row <= Self::ROW_MASK);
        LocalAddr(Self::ACC_BIT | row)
    }

    pub fn accumulating(self) -> Self {
        LocalAddr(self.0 | Self::ACCUMULATE_BIT)
    }

    pub const fn from_bits(bits: u32) -> Self {
        LocalAddr(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }

    pub fn is_acc(self) -> bool {
        self.0 & Self::ACC_BIT != 0
    }

    pub fn accumulate(self) -> bool {
        !self.is_none() && self.0 & Self::ACCUMULATE_BIT != 0
    }

    pub fn row(self) -> usize {
        (self.0 & Self::ROW_MASK) as usize
    }

    pub fn offset(self, rows: usize) -> Self {
        LocalAddr(self.0 + rows as u32)
    }
}

impl fmt::Display for LocalAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            return f.write_str("none");
        }
        let bank = if self.is_acc() { "acc" } else { "spad" };
        let plus = if self.accumulate() { "+" } else { "" };
        write!(f, "{bank}{plus}:{}", self.row())
    }
}

/// A decoded command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Config {
        dataflow: Dataflow,
        activation: Activation,
        load_stride: u16,
        store_stride: u16,
        k: u16,
        n: u16,
        m: u16,
    },
    Mvin {
        mem_addr: u64,
        local: LocalAddr,
        rows: u16,
        cols: u16,
    },
    Mvout {
        mem_addr: u64,
        local: LocalAddr,
        rows: u16,
        narrow: bool,
    },
    Preload {
        local: LocalAddr,
        rows: u16,
    },
    Compute {
        a: LocalAddr,
        /// `D` in weight-stationary mode, `B` in output-stationary mode.
        streamed: LocalAddr,
        dest: LocalAddr,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum DecodeError {
    #[error("{kind} operand {operand} has reserved bits set: {value:#x}")]
    ReservedBits {
        kind: CommandKind,
        operand: &'static str,
        value: u64,
    },
    #[error("unknown activation code {0}")]
    Activation(u64),
}

fn field(word: u64, lo: u32, width: u32) -> u64 {
    (word >> lo) & ((1u64 << width) - 1)
}

impl Op {
    pub fn kind(&self) -> CommandKind {
        match self {
            Op::Config { .. } => CommandKind::Config,
            Op::Mvin { .. } => CommandKind::Mvin,
            Op::Mvout { .. } => CommandKind::Mvout,
            Op::Preload { .. } => CommandKind::Preload,
            Op::Compute { .. } => CommandKind::Compute,
        }
    }

    pub fn encode(&self) -> Command {
        let (rs1, rs2) = match *self {
            Op::Config {
                dataflow,
                activation,
                load_stride,
                store_stride,
                k,
                n,
                m,
            } => {
                let df = matches!(dataflow, Dataflow::OutputStationary) as u64;
                let act = match activation {
                    Activation::None => 0,
                    Activation::Relu => 1,
                };
                (
                    df | act << 1 | (load_stride as u64) << 16 | (store_stride as u64) << 32,
                    k as u64 | (n as u64) << 16 | (m as u64) << 32,
                )
            }
            Op::Mvin {
                mem_addr,
                local,
                rows,
                cols,
            } => (
                mem_addr,
                local.bits() as u64 | (rows as u64) << 32 | (cols as u64) << 48,
            ),
            Op::Mvout {
                mem_addr,
                local,
                rows,
                narrow,
            } => (
                mem_addr,
                local.bits() as u64 | (rows as u64) << 32 | (narrow as u64) << 48,
            ),
            Op::Preload { local, rows } => (local.bits() as u64 | (rows as u64) << 32, 0),
            Op::Compute { a, streamed, dest } => (a.bits() as u64 | (streamed.bits() as u64) << 32, dest.bits() as u64),
        };
        Command::new(self.kind(), rs1, rs2)
    }

    /// Decode operand fields. Tags are not inspected here; the controller
    /// rejects tagged commands before decoding.
    pub fn decode(cmd: &Command) -> Result<Op, DecodeError> {
        let (rs1, rs2) = (cmd.rs1.data, cmd.rs2.data);
        let reserved = |operand: &'static str, value: u64, used: u64| {
            if value & !used != 0 {
                Err(DecodeError::ReservedBits {
                    kind: cmd.kind,
                    operand,
                    value,
                })
            } else {
                Ok(())
            }
        };
        let local = |w: u64| LocalAddr::from_bits(field(w, 0, 32) as u32);
        Ok(match cmd.kind {
            CommandKind::Config => {
                reserved("rs1", rs1, 0x0000_FFFF_FFFF_0007)?;
                reserved("rs2", rs2, 0x0000_FFFF_FFFF_FFFF)?;
                let activation = match field(rs1, 1, 2) {
                    0 => Activation::None,
                    1 => Activation::Relu,
                    other => return Err(DecodeError::Activation(other)),
                };
                Op::Config {
                    dataflow: if rs1 & 1 == 0 {
                        Dataflow::WeightStationary
                    } else {
                        Dataflow::OutputStationary
                    },
                    activation,
                    load_stride: field(rs1, 16, 16) as u16,
                    store_stride: field(rs1, 32, 16) as u16,
                    k: field(rs2, 0, 16) as u16,
                    n: field(rs2, 16, 16) as u16,
                    m: field(rs2, 32, 16) as u16,
                }
            }
            CommandKind::Mvin => Op::Mvin {
                mem_addr: rs1,
                local: local(rs2),
                rows: field(rs2, 32, 16) as u16,
                cols: field(rs2, 48, 16) as u16,
            },
            CommandKind::Mvout => {
                reserved("rs2", rs2, 0x0001_FFFF_FFFF_FFFF)?;
                Op::Mvout {
                    mem_addr: rs1,
                    local: local(rs2),
                    rows: field(rs2, 32, 16) as u16,
                    narrow: field(rs2, 48, 1) == 1,
                }
            }
            CommandKind::Preload => {
                reserved("rs1", rs1, 0x0000_FFFF_FFFF_FFFF)?;
                reserved("rs2", rs2, 0)?;
                Op::Preload {
                    local: local(rs1),
                    rows: field(rs1, 32, 16) as u16,
                }
            }
            CommandKind::Compute => {
                reserved("rs2", rs2, 0xFFFF_FFFF)?;
                Op::Compute {
                    a: local(rs1),
                    streamed: LocalAddr::from_bits(field(rs1, 32, 32) as u32),
                    dest: local(rs2),
                }
            }
        })
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Config {
                dataflow,
                activation,
                load_stride,
                store_stride,
                k,
                n,
                m,
            } => write!(
                f,
                "CONFIG {dataflow:?} {activation:?} k={k} n={n} m={m} ld_stride={load_stride} st_stride={store_stride}"
            ),
            Op::Mvin {
                mem_addr,
                local,
                rows,
                cols,
            } => write!(f, "MVIN mem={mem_addr} -> {local} rows={rows} cols={cols}"),
            Op::Mvout {
                mem_addr,
                local,
                rows,
                narrow,
            } => write!(f, "MVOUT {local} -> mem={mem_addr} rows={rows} narrow={narrow}"),
            Op::Preload { local, rows } => write!(f, "PRELOAD {local} rows={rows}"),
            Op::Compute { a, streamed, dest } => {
                write!(f, "COMPUTE a={a} streamed={streamed} -> {dest}")
            }
        }
    }
}
