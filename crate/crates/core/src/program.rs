//! Building command programs: matrices in tagged memory and tiled matrix
//! multiplication on a `dim x dim` array.
//!
//! A matrix is stored row-major in chunks of `dim` elements. Each chunk
//! starts on a word boundary and is padded with zeros, so one chunk is
//! exactly what one MVIN row transfer reads.

use rand::Rng;

use crate::command::{Command, LocalAddr, Op};
use crate::controller::AccelConfig;
use crate::memory::{pack_elems, unpack_elems, TaggedMemory};
use crate::mesh::{Activation, Dataflow};
use crate::row::ElemWidth;
use crate::tag::Tag;
use crate::workload::{MemRecord, Workload};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<i32>,
    pub row_tags: Vec<Tag>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self {
            rows,
            cols,
            data,
            row_tags: vec![Tag::PUBLIC; rows],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<i32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Entries drawn uniformly from `lo..=hi`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, lo: i32, hi: i32) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..=hi)).collect();
        Self::new(rows, cols, data)
    }

    pub fn with_tag(mut self, tag: Tag) -> Self {
        self.row_tags = vec![tag; self.rows];
        self
    }

    pub fn with_row_tags(mut self, tags: Vec<Tag>) -> Self {
        assert_eq!(tags.len(), self.rows);
        self.row_tags = tags;
        self
    }

    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<i32>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn map(mut self, f: impl Fn(i32) -> i32) -> Self {
        for x in &mut self.data {
            *x = f(*x);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MatrixLayout {
    pub base: u64,
    pub rows: usize,
    pub cols: usize,
    pub width: ElemWidth,
    pub dim: usize,
}

impl MatrixLayout {
    pub fn chunk_words(&self) -> usize {
        self.width.words_for(self.dim)
    }

    pub fn chunks(&self) -> usize {
        self.cols.div_ceil(self.dim).max(1)
    }

    /// Words from one matrix row to the next.
    pub fn stride(&self) -> usize {
        self.chunks() * self.chunk_words()
    }

    pub fn words(&self) -> usize {
        self.rows * self.stride()
    }

    pub fn addr(&self, row: usize, chunk: usize) -> u64 {
        self.base + (row * self.stride() + chunk * self.chunk_words()) as u64
    }

    /// One record per matrix row, tagged with that row's tag.
    pub fn records(&self, m: &Matrix) -> Vec<MemRecord> {
        assert_eq!((m.rows, m.cols), (self.rows, self.cols), "matrix shape");
        (0..m.rows)
            .map(|i| {
                let mut data = Vec::with_capacity(self.stride());
                for chunk in m.row(i).chunks(self.dim) {
                    let mut elems = chunk.to_vec();
                    elems.resize(self.dim, 0);
                    data.extend(pack_elems(&elems, self.width));
                }
                MemRecord {
                    addr: self.addr(i, 0),
                    data,
                    tag: m.row_tags[i],
                }
            })
            .collect()
    }

    /// Read the matrix back. A row's tag is the tag of its first word.
    pub fn read(&self, mem: &TaggedMemory) -> Matrix {
        let cw = self.chunk_words();
        let mut data = Vec::with_capacity(self.rows * self.cols);
        let mut tags = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let words: Vec<_> = (0..self.stride())
                .map(|w| mem.get(self.addr(i, 0) + w as u64).unwrap_or_default())
                .collect();
            tags.push(words.first().map_or(Tag::PUBLIC, |w| w.tag));
            let mut row = Vec::with_capacity(self.chunks() * self.dim);
            for chunk in words.chunks(cw) {
                let raw: Vec<u64> = chunk.iter().map(|w| w.data).collect();
                row.extend(unpack_elems(&raw, self.dim, self.width));
            }
            data.extend_from_slice(&row[..self.cols]);
        }
        Matrix::new(self.rows, self.cols, data).with_row_tags(tags)
    }
}

/// Operand placement for [`ProgramBuilder::matmul`]: `c = act(a * b + d)`.
#[derive(Clone, Copy, Debug)]
pub struct MatmulLayouts {
    pub a: MatrixLayout,
    pub b: MatrixLayout,
    pub d: Option<MatrixLayout>,
    pub c: MatrixLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Settings {
    activation: Activation,
    load_stride: u16,
    store_stride: u16,
    k: u16,
    n: u16,
    m: u16,
}

#[derive(Clone, Debug)]
pub struct ProgramBuilder {
    dim: usize,
    dataflow: Dataflow,
    next_addr: u64,
    memory: Vec<MemRecord>,
    expected: Vec<MemRecord>,
    commands: Vec<Command>,
    spad_rows: usize,
    acc_rows: usize,
    settings: Option<Settings>,
}

fn u16_of(v: usize, what: &str) -> u16 {
    u16::try_from(v).unwrap_or_else(|_| panic!("{what} {v} does not fit in 16 bits"))
}

impl ProgramBuilder {
    pub fn new(dim: usize, dataflow: Dataflow) -> Self {
        Self {
            dim,
            dataflow,
            next_addr: 0,
            memory: Vec::new(),
            expected: Vec::new(),
            commands: Vec::new(),
            spad_rows: 2 * dim,
            acc_rows: dim,
            settings: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alloc(&mut self, rows: usize, cols: usize, width: ElemWidth) -> MatrixLayout {
        let layout = MatrixLayout {
            base: self.next_addr,
            rows,
            cols,
            width,
            dim: self.dim,
        };
        self.next_addr += layout.words() as u64;
        layout
    }

    /// Allocate and initialise memory for `m`.
    pub fn place(&mut self, m: &Matrix, width: ElemWidth) -> MatrixLayout {
        let layout = self.alloc(m.rows, m.cols, width);
        self.memory.extend(layout.records(m));
        layout
    }

    pub fn expect(&mut self, layout: &MatrixLayout, m: &Matrix) {
        self.expected.extend(layout.records(m));
    }

    pub fn push(&mut self, cmd: Command) {
        self.commands.push(cmd);
    }

    pub fn commands_mut(&mut self) -> &mut Vec<Command> {
        &mut self.commands
    }

    pub fn reserve_spad(&mut self, rows: usize) {
        self.spad_rows = self.spad_rows.max(rows);
    }

    pub fn reserve_acc(&mut self, rows: usize) {
        self.acc_rows = self.acc_rows.max(rows);
    }

    /// Emit a CONFIG unless the array is already configured this way.
    fn configure(&mut self, s: Settings) {
        if self.settings == Some(s) {
            return;
        }
        self.settings = Some(s);
        self.commands.push(
            Op::Config {
                dataflow: self.dataflow,
                activation: s.activation,
                load_stride: s.load_stride,
                store_stride: s.store_stride,
                k: s.k,
                n: s.n,
                m: s.m,
            }
            .encode(),
        );
    }

    fn with_load_stride(&mut self, layout: &MatrixLayout) {
        let mut s = self.settings.unwrap_or(Settings {
            activation: Activation::None,
            load_stride: 0,
            store_stride: 0,
            k: 0,
            n: 0,
            m: 0,
        });
        s.load_stride = u16_of(layout.stride(), "stride");
        self.configure(s);
    }

    fn mvin(&mut self, layout: &MatrixLayout, row: usize, chunk: usize, local: LocalAddr, rows: usize) {
        self.with_load_stride(layout);
        self.commands.push(
            Op::Mvin {
                mem_addr: layout.addr(row, chunk),
                local,
                rows: u16_of(rows, "rows"),
                cols: 0,
            }
            .encode(),
        );
    }

    fn op(&mut self, op: Op) {
        self.commands.push(op.encode());
    }

    /// Tiled `c = act(a * b + d)`. Partial sums for one output tile stay in
    /// the accumulator and re-enter the array as the next tile's `D`; the
    /// activation is applied on the last tile only.
    pub fn matmul(&mut self, l: &MatmulLayouts, activation: Activation) {
        let (k, n, m) = (l.a.rows, l.a.cols, l.b.cols);
        assert_eq!(l.b.rows, n, "inner dimensions");
        assert_eq!((l.c.rows, l.c.cols), (k, m), "output shape");
        if let Some(d) = &l.d {
            assert_eq!((d.rows, d.cols), (k, m), "bias shape");
            assert_eq!(d.width, ElemWidth::I32, "bias lives in the accumulator");
        }
        assert_eq!(l.a.width, ElemWidth::I8);
        assert_eq!(l.b.width, ElemWidth::I8);
        // The dataflow must be set before anything is preloaded.
        self.with_load_stride(&l.a);
        match self.dataflow {
            Dataflow::WeightStationary => self.matmul_ws(l, activation, k, n, m),
            Dataflow::OutputStationary => self.matmul_os(l, activation, k, n, m),
        }
    }

    fn compute_settings(&self, l: &MatmulLayouts, activation: Activation, k: usize, n: usize, m: usize) -> Settings {
        Settings {
            activation,
            load_stride: self.settings.map_or(0, |s| s.load_stride),
            store_stride: u16_of(l.c.stride(), "stride"),
            k: u16_of(k, "k"),
            n: u16_of(n, "n"),
            m: u16_of(m, "m"),
        }
    }

    fn mvout(&mut self, l: &MatmulLayouts, row: usize, chunk: usize, rows: usize) {
        self.op(Op::Mvout {
            mem_addr: l.c.addr(row, chunk),
            local: LocalAddr::acc(0),
            rows: u16_of(rows, "rows"),
            narrow: l.c.width == ElemWidth::I8,
        });
    }

    fn matmul_ws(&mut self, l: &MatmulLayouts, activation: Activation, k: usize, n: usize, m: usize) {
        let dim = self.dim;
        self.reserve_spad(dim + k);
        self.reserve_acc(k);
        let a_local = LocalAddr::spad(dim as u32);
        let acc = LocalAddr::acc(0);
        let n_tiles = n.div_ceil(dim);
        for tj in 0..m.div_ceil(dim) {
            for tk in 0..n_tiles {
                let last = tk + 1 == n_tiles;
                let b_rows = dim.min(n - tk * dim);
                self.mvin(&l.b, tk * dim, tj, LocalAddr::spad(0), b_rows);
                self.op(Op::Preload {
                    local: LocalAddr::spad(0),
                    rows: u16_of(b_rows, "rows"),
                });
                self.mvin(&l.a, 0, tk, a_local, k);
                let streamed = match (&l.d, tk) {
                    (Some(d), 0) => {
                        self.mvin(d, 0, tj, acc, k);
                        acc
                    }
                    (None, 0) => LocalAddr::NONE,
                    _ => acc,
                };
                let act = if last { activation } else { Activation::None };
                let s = self.compute_settings(l, act, k, b_rows, m);
                self.configure(s);
                self.op(Op::Compute {
                    a: a_local,
                    streamed,
                    dest: acc,
                });
            }
            self.mvout(l, 0, tj, k);
        }
    }

    fn matmul_os(&mut self, l: &MatmulLayouts, activation: Activation, k: usize, n: usize, m: usize) {
        let dim = self.dim;
        self.reserve_spad(2 * dim);
        self.reserve_acc(dim);
        let acc = LocalAddr::acc(0);
        let n_tiles = n.div_ceil(dim);
        for ti in 0..k.div_ceil(dim) {
            let rows = dim.min(k - ti * dim);
            for tj in 0..m.div_ceil(dim) {
                for tk in 0..n_tiles {
                    let last = tk + 1 == n_tiles;
                    let inner = dim.min(n - tk * dim);
                    match (&l.d, tk) {
                        (Some(d), 0) => {
                            self.mvin(d, ti * dim, tj, acc, rows);
                            self.preload_acc(rows);
                        }
                        (None, 0) => self.op(Op::Preload {
                            local: LocalAddr::NONE,
                            rows: 0,
                        }),
                        _ => self.preload_acc(rows),
                    }
                    self.mvin(&l.a, ti * dim, tk, LocalAddr::spad(0), rows);
                    self.mvin(&l.b, tk * dim, tj, LocalAddr::spad(dim as u32), inner);
                    let act = if last { activation } else { Activation::None };
                    let s = self.compute_settings(l, act, rows, inner, m);
                    self.configure(s);
                    self.op(Op::Compute {
                        a: LocalAddr::spad(0),
                        streamed: LocalAddr::spad(dim as u32),
                        dest: acc,
                    });
                }
                self.mvout(l, ti * dim, tj, rows);
            }
        }
    }

    fn preload_acc(&mut self, rows: usize) {
        self.op(Op::Preload {
            local: LocalAddr::acc(0),
            rows: u16_of(rows, "rows"),
        });
    }

    pub fn finish(self) -> Workload {
        Workload {
            config: AccelConfig::new(self.dim).with_rows(self.spad_rows, self.acc_rows),
            memory_words: self.next_addr as usize,
            memory: self.memory,
            commands: self.commands,
            expected: (!self.expected.is_empty()).then_some(self.expected),
        }
    }
}

/// A complete single-matmul workload: `c = act(a * b + d)` with `c` stored
/// as 32-bit elements, and `expected` filled from `reference` if given.
pub fn matmul_workload(
    dim: usize,
    dataflow: Dataflow,
    activation: Activation,
    a: &Matrix,
    b: &Matrix,
    d: Option<&Matrix>,
    reference: Option<&Matrix>,
) -> (Workload, MatrixLayout) {
    let mut p = ProgramBuilder::new(dim, dataflow);
    let la = p.place(a, ElemWidth::I8);
    let lb = p.place(b, ElemWidth::I8);
    let ld = d.map(|d| p.place(d, ElemWidth::I32));
    let lc = p.alloc(a.rows, b.cols, ElemWidth::I32);
    p.matmul(
        &MatmulLayouts {
            a: la,
            b: lb,
            d: ld,
            c: lc,
        },
        activation,
    );
    if let Some(r) = reference {
        p.expect(&lc, r);
    }
    (p.finish(), lc)
}

/// Two-layer perceptron: `h = sat8(relu(x * w1 + b1))`, `y = h * w2 + b2`.
pub struct Perceptron<'a> {
    pub x: &'a Matrix,
    pub w1: &'a Matrix,
    pub b1: &'a Matrix,
    pub w2: &'a Matrix,
    pub b2: &'a Matrix,
}

impl Perceptron<'_> {
    /// The program plus the layouts of `h` and `y`.
    pub fn build(&self, dim: usize, dataflow: Dataflow) -> (ProgramBuilder, MatrixLayout, MatrixLayout) {
        let mut p = ProgramBuilder::new(dim, dataflow);
        let lx = p.place(self.x, ElemWidth::I8);
        let lw1 = p.place(self.w1, ElemWidth::I8);
        let lb1 = p.place(self.b1, ElemWidth::I32);
        let lw2 = p.place(self.w2, ElemWidth::I8);
        let lb2 = p.place(self.b2, ElemWidth::I32);
        let lh = p.alloc(self.x.rows, self.w1.cols, ElemWidth::I8);
        let ly = p.alloc(self.x.rows, self.w2.cols, ElemWidth::I32);
        p.matmul(
            &MatmulLayouts {
                a: lx,
                b: lw1,
                d: Some(lb1),
                c: lh,
            },
            Activation::Relu,
        );
        p.matmul(
            &MatmulLayouts {
                a: lh,
                b: lw2,
                d: Some(lb2),
                c: ly,
            },
            Activation::None,
        );
        (p, lh, ly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trip() {
        let m = Matrix::from_rows(&[vec![1, -2, 3], vec![4, 5, -6]]).with_row_tags(vec![Tag::new(2), Tag::PUBLIC]);
        let mut p = ProgramBuilder::new(2, Dataflow::WeightStationary);
        let l = p.place(&m, ElemWidth::I8);
        assert_eq!((l.chunks(), l.chunk_words(), l.stride()), (2, 1, 2));
        let w = p.finish();
        let mem = w.build_memory().unwrap();
        assert_eq!(l.read(&mem), m);
    }

    #[test]
    fn redundant_config_is_skipped() {
        let a = Matrix::zeros(2, 2);
        let (w, _) = matmul_workload(2, Dataflow::WeightStationary, Activation::None, &a, &a, None, None);
        let configs = w
            .commands
            .iter()
            .filter(|c| c.kind == crate::command::CommandKind::Config)
            .count();
        assert_eq!(configs, 2);
    }
}
