//! Checks the tape-built forward passes against straight-line scalar
//! reimplementations. The oracle code below shares nothing with the library
//! beyond the parameter tensors themselves: norms, rotary positions,
//! attention, and the activation are all written out longhand from their
//! definitions, so a transcription bug in either side shows up as a mismatch.

use widthlab::model::{forward_base, BaseParams, ModelConfig};
use widthlab::numerics::{init_rng, Array2, Tape};

type Mat = Vec<Vec<f64>>;

fn rows_of(a: &Array2) -> Mat {
    let (r, c) = a.shape();
    (0..r).map(|i| (0..c).map(|j| a.at(i, j)).collect()).collect()
}

/// y = x Wᵀ for row-major W of shape (out, in).
fn project(x: &Mat, w: &Array2) -> Mat {
    let (out_dim, in_dim) = w.shape();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), in_dim);
            (0..out_dim)
                .map(|j| (0..in_dim).map(|k| row[k] * w.at(j, k)).sum())
                .collect()
        })
        .collect()
}

fn rmsnorm_scaled(x: &Mat, scale: &Array2) -> Mat {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let r = (ms + 1e-12).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| v / r * scale.at(0, j))
                .collect()
        })
        .collect()
}

fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh())
}

fn rope(row: &[f64], pos: usize) -> Vec<f64> {
    let d = row.len();
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let theta = (pos as f64) * (10000.0f64).powf(-2.0 * i as f64 / d as f64);
        let (sin, cos) = theta.sin_cos();
        out[2 * i] = row[2 * i] * cos - row[2 * i + 1] * sin;
        out[2 * i + 1] = row[2 * i] * sin + row[2 * i + 1] * cos;
    }
    out
}

fn attention(q: &Mat, k: &Mat, v: &Mat, n_heads: usize, head_dim: usize) -> Mat {
    let seq = q.len();
    let mut out = vec![vec![0.0; n_heads * head_dim]; seq];
    for h in 0..n_heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        let qh: Mat = (0..seq).map(|i| rope(&q[i][cols.clone()], i)).collect();
        let kh: Mat = (0..seq).map(|i| rope(&k[i][cols.clone()], i)).collect();
        for i in 0..seq {
            // Causal scores over positions 0..=i, softmax with max shift.
            let scores: Vec<f64> = (0..=i)
                .map(|j| {
                    let dot: f64 = (0..head_dim).map(|t| qh[i][t] * kh[j][t]).sum();
                    dot / (head_dim as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (t, slot) in out[i][cols.clone()].iter_mut().enumerate() {
                *slot = (0..=i)
                    .map(|j| exps[j] / z * v[j][h * head_dim + t])
                    .sum();
            }
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn oracle_base_logits(params: &BaseParams, tokens: &[usize]) -> Mat {
    let cfg = &params.config;
    let mut x: Mat = tokens.iter().map(|&t| rows_of(&params.embed)[t].clone()).collect();
    for layer in &params.layers {
        let xn = rmsnorm_scaled(&x, &layer.attn_norm);
        let q = project(&xn, &layer.wq);
        let k = project(&xn, &layer.wk);
        let v = project(&xn, &layer.wv);
        let att = attention(&q, &k, &v, cfg.n_heads, cfg.head_dim);
        x = add(&x, &project(&att, &layer.wo));

        let xn = rmsnorm_scaled(&x, &layer.ffn_norm);
        let mut h = project(&xn, &layer.w_ffn_up);
        for row in &mut h {
            for v in row.iter_mut() {
                *v = gelu(*v);
            }
        }
        x = add(&x, &project(&h, &layer.w_ffn_down));
    }
    let xn = rmsnorm_scaled(&x, &params.final_norm);
    project(&xn, &params.output)
}

#[test]
fn base_forward_matches_scalar_oracle() {
    let cfg = ModelConfig {
        vocab: 20,
        d_model: 12,
        n_layers: 3,
        n_heads: 2,
        head_dim: 6,
        d_ff: 24,
        max_seq: 10,
    };
    let params = BaseParams::init(&cfg, 42).unwrap();
    let tokens = [7usize, 0, 19, 3, 3, 11, 5];

    let want = oracle_base_logits(&params, &tokens);
    let mut tape = Tape::new();
    let got = forward_base(&mut tape, &params, &tokens).unwrap();
    let got = tape.value(got.logits);

    let mut worst = 0.0f64;
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            worst = worst.max((got.at(i, j) - w).abs());
        }
    }
    assert!(worst < 1e-10, "max |tape - oracle| = {worst:.3e}");
}

#[test]
fn partitioned_linear_equals_concatenated_matrix() {
    use widthlab::model::{expand_linear, InitKind};

    let mut rng = init_rng(9);
    let w = Array2::randn(6, 5, &mut rng).scale(0.3);
    let (lin, _) =
        expand_linear(&w, 3, 4, InitKind::Random, InitKind::Random, &mut rng).unwrap();
    let x = Array2::randn(2, 5, &mut rng);
    let xup = Array2::randn(2, 4, &mut rng);
    // Concatenated form: [y yup] = [x xup] · [[W, W12], [W21, W22]]ᵀ.
    let full = Array2::from_fn(9, 9, |i, j| match (i < 6, j < 5) {
        (true, true) => lin.w.at(i, j),
        (true, false) => lin.w12.at(i, j - 5),
        (false, true) => lin.w21.at(i - 6, j),
        (false, false) => lin.w22.at(i - 6, j - 5),
    });
    let xin = Array2::from_fn(2, 9, |i, j| if j < 5 { x.at(i, j) } else { xup.at(i, j - 5) });
    let want = xin.matmul_nt(&full).unwrap();

    let y = x.matmul_nt(&lin.w).unwrap(); // W12 is zero right after expansion
    let yup = x
        .matmul_nt(&lin.w21)
        .unwrap()
        .add(&xup.matmul_nt(&lin.w22).unwrap())
        .unwrap();
    for i in 0..2 {
        for j in 0..9 {
            let got = if j < 6 { y.at(i, j) } else { yup.at(i, j - 6) };
            assert!((got - want.at(i, j)).abs() < 1e-12);
        }
    }
}
