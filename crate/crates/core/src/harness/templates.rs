//! Random workload families for the fuzzer.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::command::{LocalAddr, Op};
use crate::harness::oracle::{oracle_matmul, oracle_output_tags};
use crate::mesh::{Activation, Dataflow};
use crate::program::{matmul_workload, Matrix, MatrixLayout, Perceptron, ProgramBuilder};
use crate::row::ElemWidth;
use crate::tag::Tag;
use crate::workload::{MemRecord, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    /// Tiled matmul on a 2, 4 or 8 wide array, or a fixed width.
    Matmul(Option<usize>),
    PartialWrite,
    FaultInducing,
    Perceptron,
}

impl Template {
    pub const NAMES: &'static [&'static str] = &[
        "matmul",
        "matmul2",
        "matmul4",
        "matmul8",
        "matmul16",
        "partial-write",
        "fault-inducing",
        "perceptron",
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown template {0:?}")]
pub struct UnknownTemplate(pub String);

impl FromStr for Template {
    type Err = UnknownTemplate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "matmul" => Template::Matmul(None),
            "matmul2" => Template::Matmul(Some(2)),
            "matmul4" => Template::Matmul(Some(4)),
            "matmul8" => Template::Matmul(Some(8)),
            "matmul16" => Template::Matmul(Some(16)),
            "partial-write" => Template::PartialWrite,
            "fault" | "fault-inducing" => Template::FaultInducing,
            "perceptron" => Template::Perceptron,
            _ => return Err(UnknownTemplate(s.to_string())),
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::Matmul(None) => f.write_str("matmul"),
            Template::Matmul(Some(d)) => write!(f, "matmul{d}"),
            Template::PartialWrite => f.write_str("partial-write"),
            Template::FaultInducing => f.write_str("fault-inducing"),
            Template::Perceptron => f.write_str("perceptron"),
        }
    }
}

/// What a correct run of an instance does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Expect {
    /// Completes and matches the workload's expected memory.
    Memory,
    /// Stops on a security fault.
    SecurityFault,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub workload: Workload,
    pub expect: Expect,
}

impl Template {
    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        match *self {
            Template::Matmul(dim) => {
                let dim = dim.unwrap_or_else(|| *[2, 4, 8].choose(rng).expect("non-empty"));
                let domain = Tag::new(rng.random_range(1..=3));
                random_matmul(rng, dim, &[Tag::PUBLIC, domain])
            }
            Template::PartialWrite => partial_write(rng),
            Template::FaultInducing => fault_inducing(rng),
            Template::Perceptron => perceptron(rng),
        }
    }
}

fn random_tags<R: Rng + ?Sized>(rng: &mut R, n: usize, pool: &[Tag]) -> Vec<Tag> {
    (0..n).map(|_| *pool.choose(rng).expect("non-empty pool")).collect()
}

fn random_dataflow<R: Rng + ?Sized>(rng: &mut R) -> Dataflow {
    if rng.random() {
        Dataflow::WeightStationary
    } else {
        Dataflow::OutputStationary
    }
}

fn random_activation<R: Rng + ?Sized>(rng: &mut R) -> Activation {
    if rng.random() {
        Activation::Relu
    } else {
        Activation::None
    }
}

/// Expected output of `act(a * b + d)` with tags, or `None` if some row
/// mixes domains.
pub fn expected_product(a: &Matrix, b: &Matrix, d: Option<&Matrix>, act: Activation) -> Option<Matrix> {
    let d_tags = d.map_or_else(Vec::new, |d| d.row_tags.clone());
    let tags = oracle_output_tags(&a.row_tags, &d_tags, &b.row_tags).ok()?;
    let d_rows = d.map(Matrix::to_rows);
    let c = oracle_matmul(&a.to_rows(), &b.to_rows(), d_rows.as_deref()).expect("shapes agree");
    Some(Matrix::from_rows(&c).map(|x| act.apply(x)).with_row_tags(tags))
}

/// Random tiled matmul whose row tags are drawn from `pool`.
pub fn random_matmul<R: Rng + ?Sized>(rng: &mut R, dim: usize, pool: &[Tag]) -> Instance {
    let max = 2 * dim + 1;
    let (k, n, m) = (
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
    );
    let a = Matrix::random(rng, k, n, -128, 127).with_row_tags(random_tags(rng, k, pool));
    let b = Matrix::random(rng, n, m, -128, 127).with_row_tags(random_tags(rng, n, pool));
    let d = rng
        .random_bool(0.5)
        .then(|| Matrix::random(rng, k, m, -5000, 5000).with_row_tags(random_tags(rng, k, pool)));
    let act = random_activation(rng);
    let expected = expected_product(&a, &b, d.as_ref(), act);
    let (workload, _) = matmul_workload(dim, random_dataflow(rng), act, &a, &b, d.as_ref(), expected.as_ref());
    Instance {
        expect: if expected.is_some() {
            Expect::Memory
        } else {
            Expect::SecurityFault
        },
        workload,
    }
}

/// Rows land in the scratchpad and accumulator in two steps: a full write,
/// then a narrower write over the leading columns (plain in the
/// scratchpad, accumulating in the accumulator). The merged operands feed a
/// weight-stationary product.
fn partial_write<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let dim = *[2, 4, 8].choose(rng).expect("non-empty");
    let domain = Tag::new(rng.random_range(1..=3));
    let other = Tag::new(domain.value() % 3 + 1);
    // Occasionally a second domain lands on a row already holding the first.
    let overlay_pool: &[Tag] = if rng.random_bool(0.2) {
        &[Tag::PUBLIC, domain, other]
    } else {
        &[Tag::PUBLIC, domain]
    };
    let k = rng.random_range(1..=dim);
    let cols = rng.random_range(1..dim.max(2));
    let cols = cols.min(dim);
    let base = Matrix::random(rng, k, dim, -128, 127).with_row_tags(random_tags(rng, k, &[Tag::PUBLIC, domain]));
    let overlay = Matrix::random(rng, k, cols, -128, 127).with_row_tags(random_tags(rng, k, overlay_pool));
    let bias = Matrix::random(rng, k, dim, -5000, 5000).with_row_tags(random_tags(rng, k, &[Tag::PUBLIC, domain]));
    let bias_add = Matrix::random(rng, k, cols, -5000, 5000).with_row_tags(random_tags(rng, k, overlay_pool));
    let b = Matrix::random(rng, dim, dim, -128, 127).with_row_tags(random_tags(rng, dim, &[Tag::PUBLIC, domain]));

    let mut p = ProgramBuilder::new(dim, Dataflow::WeightStationary);
    let l_base = p.place(&base, ElemWidth::I8);
    let l_overlay = p.place(&overlay, ElemWidth::I8);
    let l_bias = p.place(&bias, ElemWidth::I32);
    let l_bias_add = p.place(&bias_add, ElemWidth::I32);
    let l_b = p.place(&b, ElemWidth::I8);
    let l_c = p.alloc(k, dim, ElemWidth::I32);
    p.reserve_spad(2 * dim);

    let a_local = LocalAddr::spad(dim as u32);
    let acc = LocalAddr::acc(0);
    let act = random_activation(rng);
    let config = |stride: usize, act, k| {
        Op::Config {
            dataflow: Dataflow::WeightStationary,
            activation: act,
            load_stride: stride as u16,
            store_stride: l_c.stride() as u16,
            k,
            n: dim as u16,
            m: dim as u16,
        }
        .encode()
    };
    let mvin = |l: &MatrixLayout, local, rows: usize, cols: usize| {
        Op::Mvin {
            mem_addr: l.base,
            local,
            rows: rows as u16,
            cols: if cols == dim { 0 } else { cols as u16 },
        }
        .encode()
    };
    let k16 = k as u16;
    for cmd in [
        config(l_b.stride(), Activation::None, k16),
        mvin(&l_b, LocalAddr::spad(0), dim, dim),
        Op::Preload {
            local: LocalAddr::spad(0),
            rows: dim as u16,
        }
        .encode(),
        mvin(&l_base, a_local, k, dim),
        mvin(&l_overlay, a_local, k, cols),
        config(l_bias.stride(), Activation::None, k16),
        mvin(&l_bias, acc, k, dim),
        mvin(&l_bias_add, acc.accumulating(), k, cols),
        config(l_bias.stride(), act, k16),
        Op::Compute {
            a: a_local,
            streamed: acc,
            dest: acc,
        }
        .encode(),
        Op::Mvout {
            mem_addr: l_c.base,
            local: acc,
            rows: k16,
            narrow: false,
        }
        .encode(),
    ] {
        p.push(cmd);
    }

    // Reference: merge the overlays by hand.
    let mut merged_a = base.clone();
    let mut merged_d = bias.clone();
    let mut faulted = false;
    for i in 0..k {
        for j in 0..cols {
            merged_a.data[i * dim + j] = overlay.get(i, j);
            merged_d.data[i * dim + j] = bias.get(i, j).wrapping_add(bias_add.get(i, j));
        }
        match (
            oracle_output_tags(&[base.row_tags[i]], &[overlay.row_tags[i]], &[]),
            oracle_output_tags(&[bias.row_tags[i]], &[bias_add.row_tags[i]], &[]),
        ) {
            (Ok(a), Ok(d)) => {
                merged_a.row_tags[i] = a[0];
                merged_d.row_tags[i] = d[0];
            }
            _ => faulted = true,
        }
    }
    let expected = if faulted {
        None
    } else {
        expected_product(&merged_a, &b, Some(&merged_d), act)
    };
    if let Some(c) = &expected {
        p.expect(&l_c, c);
    }
    Instance {
        expect: if expected.is_some() {
            Expect::Memory
        } else {
            Expect::SecurityFault
        },
        workload: p.finish(),
    }
}

/// Workloads that should stop on a security fault most of the time: rows
/// from several domains, a tagged command operand, or a row whose words
/// disagree on their tag.
fn fault_inducing<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let dim = *[2, 4, 8].choose(rng).expect("non-empty");
    let pool = [Tag::PUBLIC, Tag::new(1), Tag::new(2)];
    match rng.random_range(0..3) {
        0 => random_matmul(rng, dim, &pool),
        1 => {
            let mut inst = random_matmul(rng, dim, &pool[..2]);
            let cmds = &mut inst.workload.commands;
            let i = rng.random_range(0..cmds.len());
            let t = Tag::new(rng.random_range(1..=3));
            match rng.random_range(0..3) {
                0 => cmds[i].inst_tag = t,
                1 => cmds[i].rs1.tag = t,
                _ => cmds[i].rs2.tag = t,
            }
            inst.expect = Expect::SecurityFault;
            inst
        }
        _ => {
            // A bias row spans 32-bit elements over several words; give one
            // of those words a second domain.
            let dim = dim.max(4);
            let mut inst = random_matmul(rng, dim, &pool[..2]);
            let loads = inst
                .workload
                .commands
                .iter()
                .filter_map(|c| match Op::decode(c) {
                    Ok(Op::Mvin { mem_addr, local, .. }) if local.is_acc() => Some(mem_addr),
                    _ => None,
                })
                .collect::<Vec<_>>();
            let Some(&addr) = loads.choose(rng) else {
                return inst;
            };
            let mem = inst.workload.build_memory().expect("builder output is valid");
            let first = mem.get(addr).expect("in range");
            let t = if first.tag == Tag::new(1) {
                Tag::new(2)
            } else {
                Tag::new(1)
            };
            let second = mem.get(addr + 1).expect("in range");
            inst.workload.memory.push(MemRecord {
                addr: addr + 1,
                data: vec![second.data],
                tag: t,
            });
            if first.tag.is_blinded() {
                inst.expect = Expect::SecurityFault;
            } else {
                // A public word next to a tagged one is not a conflict; the
                // result is simply no longer predictable here.
                inst.workload.expected = None;
                inst.expect = Expect::Memory;
            }
            inst
        }
    }
}

fn perceptron<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let dim = *[2, 4, 8].choose(rng).expect("non-empty");
    let client = Tag::new(rng.random_range(1..=3));
    let max = 2 * dim;
    let (batch, inputs, hidden, outputs) = (
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
    );
    let x =
        Matrix::random(rng, batch, inputs, -128, 127).with_row_tags(random_tags(rng, batch, &[Tag::PUBLIC, client]));
    let w1 = Matrix::random(rng, inputs, hidden, -8, 8);
    let b1 = Matrix::random(rng, batch, hidden, -200, 200);
    let w2 = Matrix::random(rng, hidden, outputs, -8, 8);
    let b2 = Matrix::random(rng, batch, outputs, -200, 200);
    let net = Perceptron {
        x: &x,
        w1: &w1,
        b1: &b1,
        w2: &w2,
        b2: &b2,
    };
    let (mut p, lh, ly) = net.build(dim, random_dataflow(rng));
    let h = expected_product(&x, &w1, Some(&b1), Activation::Relu)
        .expect("single domain")
        .map(|v| ElemWidth::I8.saturate(v));
    let y = expected_product(&h, &w2, Some(&b2), Activation::None).expect("single domain");
    p.expect(&lh, &h);
    p.expect(&ly, &y);
    Instance {
        workload: p.finish(),
        expect: Expect::Memory,
    }
}
