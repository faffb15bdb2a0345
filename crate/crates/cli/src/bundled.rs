//! The example workloads shipped in `workloads/`, generated from code so
//! their `expected` sections come from the reference model.
//!
//! Regenerate with `cargo run -p rowtag-cli --example regen-workloads`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rowtag::harness::templates::expected_product;
use rowtag::program::{matmul_workload, Matrix, Perceptron};
use rowtag::workload::Workload;
use rowtag::{Activation, Dataflow, ElemWidth, Tag};

pub struct Bundled {
    pub file: &'static str,
    pub summary: &'static str,
    pub workload: Workload,
}

impl Bundled {
    pub fn text(&self) -> String {
        format!("# {}\n\n{}", self.summary, self.workload.to_toml())
    }
}

fn small(a_tags: [u8; 2], b_tags: [u8; 2], d_tags: [u8; 2]) -> Workload {
    let tags = |t: [u8; 2]| t.iter().map(|&v| Tag::new(v)).collect::<Vec<_>>();
    let a = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).with_row_tags(tags(a_tags));
    let b = Matrix::from_rows(&[vec![5, 6], vec![7, 8]]).with_row_tags(tags(b_tags));
    let d = Matrix::from_rows(&[vec![1, 1], vec![1, 1]]).with_row_tags(tags(d_tags));
    let expected = expected_product(&a, &b, Some(&d), Activation::None);
    matmul_workload(
        2,
        Dataflow::WeightStationary,
        Activation::None,
        &a,
        &b,
        Some(&d),
        expected.as_ref(),
    )
    .0
}

fn matmul64(dim: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let client = Tag::new(3);
    let a = Matrix::random(&mut rng, 64, 64, -128, 127).with_tag(client);
    let b = Matrix::random(&mut rng, 64, 64, -128, 127);
    let d = Matrix::random(&mut rng, 64, 64, -1000, 1000);
    let expected = expected_product(&a, &b, Some(&d), Activation::Relu);
    matmul_workload(
        dim,
        Dataflow::WeightStationary,
        Activation::Relu,
        &a,
        &b,
        Some(&d),
        expected.as_ref(),
    )
    .0
}

fn perceptron() -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Matrix::random(&mut rng, 16, 32, -128, 127).with_tag(Tag::new(2));
    let w1 = Matrix::random(&mut rng, 32, 24, -4, 4);
    let b1 = Matrix::random(&mut rng, 16, 24, -100, 100);
    let w2 = Matrix::random(&mut rng, 24, 10, -4, 4);
    let b2 = Matrix::random(&mut rng, 16, 10, -100, 100);
    let net = Perceptron {
        x: &x,
        w1: &w1,
        b1: &b1,
        w2: &w2,
        b2: &b2,
    };
    let (mut p, lh, ly) = net.build(8, Dataflow::WeightStationary);
    let h = expected_product(&x, &w1, Some(&b1), Activation::Relu)
        .expect("one domain")
        .map(|v| ElemWidth::I8.saturate(v));
    let y = expected_product(&h, &w2, Some(&b2), Activation::None).expect("one domain");
    p.expect(&lh, &h);
    p.expect(&ly, &y);
    p.finish()
}

pub fn all() -> Vec<Bundled> {
    vec![
        Bundled {
            file: "small_a_tagged.toml",
            summary: "2x2 weight-stationary C = A*B + D with A row 1 in domain 5",
            workload: small([0, 5], [0, 0], [0, 0]),
        },
        Bundled {
            file: "small_d_tagged.toml",
            summary: "2x2 weight-stationary C = A*B + D with D row 0 in domain 5",
            workload: small([0, 0], [0, 0], [5, 0]),
        },
        Bundled {
            file: "small_b_tagged.toml",
            summary: "2x2 weight-stationary C = A*B + D with all of B in domain 4; every output row is tagged",
            workload: small([0, 0], [4, 4], [0, 0]),
        },
        Bundled {
            file: "small_mixed_b.toml",
            summary: "B rows from domains 4 and 6: PRELOAD faults and nothing is written back",
            workload: small([0, 0], [4, 6], [0, 0]),
        },
        Bundled {
            file: "matmul64_8x8.toml",
            summary: "64x64x64 tiled matmul with bias and ReLU on an 8x8 array; A in domain 3",
            workload: matmul64(8, 64),
        },
        Bundled {
            file: "matmul64_16x16.toml",
            summary: "64x64x64 tiled matmul with bias and ReLU on a 16x16 array; A in domain 3",
            workload: matmul64(16, 64),
        },
        Bundled {
            file: "matmul64_32x32.toml",
            summary: "64x64x64 tiled matmul with bias and ReLU on a 32x32 array; A in domain 3",
            workload: matmul64(32, 64),
        },
        Bundled {
            file: "perceptron.toml",
            summary: "two-layer perceptron (16x32 -> 24 -> 10) on an 8x8 array; inputs in domain 2, public weights",
            workload: perceptron(),
        },
    ]
}
