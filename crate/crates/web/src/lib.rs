//! Browser bindings for the simulator. Every export returns a JSON string;
//! failures come back as `{"error": "..."}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rowtag::harness::{blind, compare_observations};
use rowtag::program::{matmul_workload, Matrix, MatrixLayout};
use rowtag::trace::CycleRecord;
use rowtag::{controller, Activation, CommandKind, Controller, Dataflow, Tag, TaggedMemory};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

fn error(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn tags(raw: &[u8]) -> Vec<Tag> {
    raw.iter().map(|&t| Tag::new(t)).collect()
}

#[derive(Serialize)]
struct Output {
    rows: Vec<Vec<i32>>,
    tags: Vec<u8>,
}

impl Output {
    fn read(layout: &MatrixLayout, mem: &TaggedMemory) -> Self {
        let m = layout.read(mem);
        Self {
            rows: m.to_rows(),
            tags: m.row_tags.iter().map(|t| t.value()).collect(),
        }
    }
}

/// 2x2 weight-stationary `C = A*B + D` with one tag per row, returning the
/// per-cycle state of the array during COMPUTE. Matrices are row-major,
/// four values each; tag arrays have two entries.
#[wasm_bindgen]
pub fn wavefront(a: &[i32], b: &[i32], d: &[i32], a_tags: &[u8], b_tags: &[u8], d_tags: &[u8]) -> String {
    if [a, b, d].iter().any(|m| m.len() != 4) || [a_tags, b_tags, d_tags].iter().any(|t| t.len() != 2) {
        return error("expected three 2x2 matrices and two tags for each");
    }
    let a = Matrix::new(2, 2, a.to_vec()).with_row_tags(tags(a_tags));
    let b = Matrix::new(2, 2, b.to_vec()).with_row_tags(tags(b_tags));
    let d = Matrix::new(2, 2, d.to_vec()).with_row_tags(tags(d_tags));
    let (workload, lc) = matmul_workload(2, Dataflow::WeightStationary, Activation::None, &a, &b, Some(&d), None);
    let mut mem = match workload.build_memory() {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let mut ctl = Controller::new(workload.config);
    ctl.enable_recording();
    let exec = ctl.run(&workload.commands, &mut mem);
    let records: Vec<CycleRecord> = ctl
        .take_records()
        .into_iter()
        .filter(|r| r.kind == Some(CommandKind::Compute))
        .collect();
    let lines: Vec<String> = records.iter().map(CycleRecord::render).collect();
    json!({
        "records": records,
        "lines": lines,
        "output": exec.fault.is_none().then(|| Output::read(&lc, &mem)),
        "fault": exec.fault.map(|f| f.to_string()),
        "total_cycles": exec.stats.total_cycles,
    })
    .to_string()
}

/// Run one random tiled matmul twice, the second time with every tagged
/// word replaced by fresh random data, and report what an observer without
/// access to tagged data can tell apart.
#[wasm_bindgen]
pub fn noninterference_pair(dim: u32, output_stationary: bool, seed: u32, a_tag: u8, b_tag: u8, d_tag: u8) -> String {
    let dim = dim as usize;
    if !(1..=16).contains(&dim) {
        return error("dim must be in 1..=16");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.into());
    let size = 2 * dim + 1;
    let a = Matrix::random(&mut rng, size, size, -128, 127).with_tag(Tag::new(a_tag));
    let b = Matrix::random(&mut rng, size, size, -128, 127).with_tag(Tag::new(b_tag));
    let d = Matrix::random(&mut rng, size, size, -1000, 1000).with_tag(Tag::new(d_tag));
    let dataflow = if output_stationary {
        Dataflow::OutputStationary
    } else {
        Dataflow::WeightStationary
    };
    let (workload, lc) = matmul_workload(dim, dataflow, Activation::Relu, &a, &b, Some(&d), None);
    let mem1 = match workload.build_memory() {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let mem2 = blind(&mem1, &mut rng);
    let run = |mem: &TaggedMemory| {
        let mut mem = mem.clone();
        let (obs, _) = controller::simulate(workload.config, &workload.commands, &mut mem);
        (obs, mem)
    };
    let (o1, m1) = run(&mem1);
    let (o2, m2) = run(&mem2);
    let verdict = match compare_observations(&o1, &o2) {
        None => "indistinguishable".to_string(),
        Some((field, detail)) => format!("differs in {field} ({detail})"),
    };
    let public_view = |out: &Output| -> Vec<Option<Vec<i32>>> {
        out.rows
            .iter()
            .zip(&out.tags)
            .map(|(r, &t)| (t == 0).then(|| r.clone()))
            .collect()
    };
    let (c1, c2) = (Output::read(&lc, &m1), Output::read(&lc, &m2));
    json!({
        "size": size,
        "verdict": verdict,
        "fault": o1.fault.as_ref().map(|f| f.to_string()),
        "cycles": [o1.total_cycles, o2.total_cycles],
        "accesses": [o1.access_trace.len(), o2.access_trace.len()],
        "public": [public_view(&c1), public_view(&c2)],
        "first_row": [c1.rows.first(), c2.rows.first()],
        "tags": c1.tags,
    })
    .to_string()
}

/// Tag-storage registers of the row-granularity design against one
/// register per processing element, for square arrays 2, 4, ... up to
/// `max_dim` (at most 64).
#[wasm_bindgen]
pub fn scaling_curve(max_dim: u32) -> String {
    let max_dim = (max_dim as usize).min(64);
    let mut points = Vec::new();
    let mut dim = 2;
    while dim <= max_dim {
        let a = Matrix::zeros(dim, dim);
        let (workload, _) = matmul_workload(dim, Dataflow::WeightStationary, Activation::None, &a, &a, None, None);
        let mut mem = match workload.build_memory() {
            Ok(m) => m,
            Err(e) => return error(e),
        };
        let (_, stats) = controller::simulate(workload.config, &workload.commands, &mut mem);
        points.push(json!({
            "dim": dim,
            "tag_registers": stats.tag_registers_used,
            "per_pe_registers": stats.per_pe_equivalent_registers,
            "ratio": stats.per_pe_equivalent_registers as f64 / stats.tag_registers_used as f64,
            "total_cycles": stats.total_cycles,
        }));
        dim *= 2;
    }
    serde_json::Value::Array(points).to_string()
}
