use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_check, softmax_row, GradCheckOptions};
use crate::nn::bigru_encoder_stack;

fn toy_dims(vocab: usize) -> AedDims {
    AedDims {
        feat: 4,
        vocab,
        enc_layers: 2,
        enc_hidden: 8,
        dim: 8,
        dec_layers: 2,
        att_dim: 8,
        ln_eps: 1e-5,
    }
}

fn toy_model(vocab: usize, range: f64, seed: u64) -> AedParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AedParams::init(toy_dims(vocab), range, &mut rng).unwrap()
}

fn random_x(rng: &mut impl Rng, t: usize, d: usize) -> Tensor {
    Tensor::matrix(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_labels(rng: &mut impl Rng, n: usize, vocab: usize) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(2..vocab)).collect();
    y.push(EOS);
    y
}

fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let n = w.cols();
    (0..n)
        .map(|j| x.iter().enumerate().map(|(p, v)| v * w.data()[p * n + j]).sum())
        .collect()
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(b) {
        assert!((p - q).abs() <= tol, "{p} vs {q}");
    }
}

fn encode_value(m: &AedParams, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let xv = tape.constant(x);
    let h = encode(&mut tape, xv, &vars.enc).unwrap();
    tape.tensor(h)
}

// ---- encode ----

#[test]
fn single_frame_encodes_to_single_row() {
    let m = toy_model(12, 0.3, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = encode_value(&m, &random_x(&mut rng, 1, 4));
    assert_eq!(h.shape(), &[1, 8]);
    assert!(h.is_finite());
}

#[test]
fn zero_weight_encoder_gives_identical_rows() {
    let mut m = toy_model(12, 0.3, 0);
    for (name, t) in m.params.iter_mut() {
        if name.starts_with("enc.") && !name.contains(".ln.") && name != "enc.proj.b" {
            t.data_mut().fill(0.0);
        }
    }
    m.params.get_mut("enc.proj.b").unwrap().data_mut().fill(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = encode_value(&m, &random_x(&mut rng, 5, 4));
    for r in 0..5 {
        assert_eq!(h.row(r), h.row(0));
        assert_eq!(h.row(r), &[0.25; 8]);
    }
}

#[test]
fn encode_is_stack_then_projection() {
    let m = toy_model(12, 0.4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_x(&mut rng, 4, 4);
    let h = encode_value(&m, &x);

    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let xv = tape.constant(&x);
    let raw = bigru_encoder_stack(&mut tape, xv, &vars.enc.layers).unwrap();
    let raw = tape.tensor(raw);
    let w = m.params.get("enc.proj.w").unwrap();
    let b = m.params.get("enc.proj.b").unwrap().data();
    for (t, row) in mat(&raw).iter().enumerate() {
        let want: Vec<f64> = vec_mat(row, w).iter().zip(b).map(|(a, c)| a + c).collect();
        close(h.row(t), &want, 1e-12);
    }
}

#[test]
fn encode_rejects_non_matrix_input() {
    let m = toy_model(12, 0.1, 0);
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let x = tape.constant_vec(vec![0.0; 4]);
    assert!(matches!(encode(&mut tape, x, &vars.enc), Err(Error::Contract(_))));
    assert!(Tensor::matrix(0, 4, vec![]).is_err());
}

// ---- attend ----

fn attend_value(m: &AedParams, s: &[f64], h: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false)?;
    let hv = tape.constant(h);
    let sv = tape.constant_vec(s.to_vec());
    let mem = attention_memory(&mut tape, hv, &vars.dec.att)?;
    let (g, a) = attend(&mut tape, sv, &mem, &vars.dec.att)?;
    Ok((tape.value(g).to_vec(), tape.value(a).to_vec()))
}

#[test]
fn single_row_attention_is_that_row() {
    let m = toy_model(12, 0.5, 4);
    let h = Tensor::matrix(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
    let (g, a) = attend_value(&m, &[0.3; 8], &h).unwrap();
    assert_eq!(a, vec![1.0]);
    close(&g, h.row(0), 1e-15);
}

#[test]
fn identical_rows_get_uniform_weights() {
    let m = toy_model(12, 0.5, 5);
    let row: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
    let h = Tensor::matrix(4, 8, row.repeat(4)).unwrap();
    let (g, a) = attend_value(&m, &[0.1; 8], &h).unwrap();
    close(&a, &[0.25; 4], 1e-15);
    close(&g, &row, 1e-12);
}

#[test]
fn attention_matches_direct_oracle() {
    let m = toy_model(12, 0.6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random_x(&mut rng, 3, 8);
    let s: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (g, a) = attend_value(&m, &s, &h).unwrap();

    let p = |n: &str| m.params.get(n).unwrap();
    let q: Vec<f64> = vec_mat(&s, p("att.w_q"))
        .iter()
        .zip(p("att.b").data())
        .map(|(a, b)| a + b)
        .collect();
    let scores: Vec<f64> = mat(&h)
        .iter()
        .map(|hi| {
            let k = vec_mat(hi, p("att.w_k"));
            k.iter()
                .zip(&q)
                .zip(p("att.v").data())
                .map(|((k, q), v)| v * (k + q).tanh())
                .sum()
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = scores.iter().map(|x| (x - mx).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|x| (x - mx).exp() / z).collect();
    close(&a, &alpha, 1e-12);
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(a.iter().all(|&v| v >= 0.0));
    let want: Vec<f64> = (0..8).map(|j| (0..3).map(|i| alpha[i] * h.row(i)[j]).sum()).collect();
    close(&g, &want, 1e-12);
}

#[test]
fn attention_rejects_width_mismatch() {
    let m = toy_model(12, 0.5, 5);
    let h = Tensor::matrix(2, 8, vec![0.0; 16]).unwrap();
    assert!(attend_value(&m, &[0.1; 7], &h).is_err());
    let h = Tensor::matrix(2, 6, vec![0.0; 12]).unwrap();
    assert!(attend_value(&m, &[0.1; 8], &h).is_err());
}

// ---- decoder_step and output layer ----

fn dec_step_value(m: &AedParams, s: &[Vec<f64>], e: &[f64], g: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false)?;
    let st: Vec<Var> = s.iter().map(|v| tape.constant_vec(v.clone())).collect();
    let ev = tape.constant_vec(e.to_vec());
    let gv = tape.constant_vec(g.to_vec());
    let out = decoder_step(&mut tape, &st, ev, gv, &vars.dec)?;
    Ok(out.iter().map(|&v| tape.value(v).to_vec()).collect())
}

#[test]
fn zero_decoder_gives_zero_state() {
    let mut m = toy_model(12, 0.5, 7);
    for (name, t) in m.params.iter_mut() {
        if name.starts_with("dec.") {
            t.data_mut().fill(0.0);
        }
    }
    let out = dec_step_value(&m, &[vec![0.0; 8], vec![0.0; 8]], &[0.5; 8], &[-0.2; 8]).unwrap();
    assert_eq!(out, vec![vec![0.0; 8], vec![0.0; 8]]);
}

#[test]
fn decoder_layers_compose_gru_cells_on_summed_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for layers in [1, 2] {
        let mut dims = toy_dims(12);
        dims.dec_layers = layers;
        let m = AedParams::init(dims, 0.5, &mut rng).unwrap();
        let s: Vec<Vec<f64>> = (0..layers)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let e: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = dec_step_value(&m, &s, &e, &g).unwrap();

        let mut tape = Tape::new();
        let b = m.params.bind_frozen(&mut tape);
        let mut x: Vec<f64> = e.iter().zip(&g).map(|(a, b)| a + b).collect();
        for l in 0..layers {
            let p = GruVars::bind(&tape, &b, &format!("dec.{l}")).unwrap();
            let xv = tape.constant_vec(x.clone());
            let hv = tape.constant_vec(s[l].clone());
            let h = gru_cell(&mut tape, xv, hv, &p).unwrap();
            x = tape.value(h).to_vec();
            close(&got[l], &x, 1e-12);
        }
    }
}

#[test]
fn decoder_rejects_wrong_state_depth() {
    let m = toy_model(12, 0.5, 7);
    assert!(dec_step_value(&m, &[vec![0.0; 8]], &[0.0; 8], &[0.0; 8]).is_err());
    assert!(dec_step_value(&m, &[vec![0.0; 8], vec![0.0; 8]], &[0.0; 7], &[0.0; 7]).is_err());
}

fn output_value(m: &AedParams, s: &[f64], g: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let sv = tape.constant_vec(s.to_vec());
    let gv = tape.constant_vec(g.to_vec());
    let z = output_logits(&mut tape, sv, gv, &vars.dec).unwrap();
    let mut p = vec![0.0; m.dims.vocab];
    softmax_row(tape.value(z), &mut p);
    p
}

#[test]
fn zero_output_layer_is_uniform() {
    let mut m = toy_model(10, 0.5, 9);
    m.params.get_mut("out.w").unwrap().data_mut().fill(0.0);
    let p = output_value(&m, &[0.3; 8], &[0.2; 8]);
    close(&p, &[0.1; 10], 1e-15);
}

#[test]
fn output_bias_shift_leaves_posterior_unchanged() {
    let mut m = toy_model(10, 0.5, 10);
    let s = [0.3, -0.1, 0.5, 0.0, 0.9, -0.7, 0.2, 0.1];
    let a = output_value(&m, &s, &[0.1; 8]);
    for v in m.params.get_mut("out.b").unwrap().data_mut() {
        *v += 3.5;
    }
    let b = output_value(&m, &s, &[0.1; 8]);
    close(&a, &b, 1e-12);
}

#[test]
fn output_matches_formula_oracle() {
    let mut m = toy_model(10, 0.5, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for v in m.params.get_mut("out.b").unwrap().data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let s: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = output_value(&m, &s, &g);
    let f: Vec<f64> = s.iter().zip(&g).map(|(a, b)| a + b).collect();
    let z: Vec<f64> = mat_vec(m.params.get("out.w").unwrap(), &f)
        .iter()
        .zip(m.params.get("out.b").unwrap().data())
        .map(|(a, b)| a + b)
        .collect();
    let total: f64 = z.iter().map(|v| v.exp()).sum();
    let want: Vec<f64> = z.iter().map(|v| v.exp() / total).collect();
    close(&p, &want, 1e-12);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

// ---- aed_forward ----

fn forward_posteriors(m: &AedParams, x: &Tensor, y: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false)?;
    let xv = tape.constant(x);
    let f = aed_forward(&mut tape, xv, y, &vars)?;
    Ok(posteriors(&tape.tensor(f.logits)))
}

#[test]
fn eos_only_label_gives_one_row() {
    let m = toy_model(12, 0.3, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = forward_posteriors(&m, &random_x(&mut rng, 3, 4), &[EOS]).unwrap();
    assert_eq!(p.shape(), &[1, 12]);
}

#[test]
fn forward_rows_are_distributions_and_attention_is_simplex() {
    let m = toy_model(12, 0.5, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_x(&mut rng, 6, 4);
    let y = random_labels(&mut rng, 4, 12);
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let xv = tape.constant(&x);
    let f = aed_forward(&mut tape, xv, &y, &vars).unwrap();
    let p = posteriors(&tape.tensor(f.logits));
    for r in mat(&p) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for a in &f.alphas {
        let a = tape.value(*a);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_step_forward_matches_hand_unrolled_oracle() {
    let m = toy_model(12, 0.5, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_x(&mut rng, 5, 4);
    let y = [7, EOS];
    let got = forward_posteriors(&m, &x, &y).unwrap();

    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let xv = tape.constant(&x);
    let h = encode(&mut tape, xv, &vars.enc).unwrap();
    let d = &vars.dec;
    let mem = attention_memory(&mut tape, h, &d.att).unwrap();
    let zero = tape.constant_vec(vec![0.0; 8]);
    // step 1: s1 = dec(0, emb[sos] + 0), g1 = attend(s1)
    let e0 = tape.gather(d.emb, SOS).unwrap();
    let s1 = decoder_step(&mut tape, &[zero, zero], e0, zero, d).unwrap();
    let (g1, _) = attend(&mut tape, s1[1], &mem, &d.att).unwrap();
    let z1 = output_logits(&mut tape, s1[1], g1, d).unwrap();
    // step 2: s2 = dec(s1, emb[y1] + g1)
    let e1 = tape.gather(d.emb, 7).unwrap();
    let s2 = decoder_step(&mut tape, &s1, e1, g1, d).unwrap();
    let (g2, _) = attend(&mut tape, s2[1], &mem, &d.att).unwrap();
    let z2 = output_logits(&mut tape, s2[1], g2, d).unwrap();
    for (row, z) in [z1, z2].iter().enumerate() {
        let mut p = vec![0.0; 12];
        softmax_row(tape.value(*z), &mut p);
        close(got.row(row), &p, 1e-12);
    }
}

#[test]
fn forward_rejects_bad_labels() {
    let m = toy_model(12, 0.3, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random_x(&mut rng, 3, 4);
    assert!(matches!(forward_posteriors(&m, &x, &[3, 12, EOS]), Err(Error::Contract(_))));
    assert!(matches!(forward_posteriors(&m, &x, &[3, 4]), Err(Error::Contract(_))));
    assert!(matches!(forward_posteriors(&m, &x, &[]), Err(Error::Contract(_))));
}

#[test]
fn forward_is_deterministic() {
    let m = toy_model(12, 0.5, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_x(&mut rng, 6, 4);
    let y = random_labels(&mut rng, 3, 12);
    let a = forward_posteriors(&m, &x, &y).unwrap();
    let b = forward_posteriors(&m, &x, &y).unwrap();
    assert_eq!(a, b);
}

// ---- aed_loss ----

#[test]
fn uniform_posteriors_cost_log_vocab_per_step() {
    let p = Tensor::matrix(3, 10, vec![0.1; 30]).unwrap();
    let l = aed_loss(&p, &[4, 2, EOS]).unwrap();
    assert!((l - 3.0 * 10f64.ln()).abs() < 1e-12);
}

#[test]
fn one_hot_correct_posteriors_cost_nothing() {
    let y = [3, 5, EOS];
    let p = one_hot_targets(&y, 6).unwrap();
    assert_eq!(aed_loss(&p, &y).unwrap(), 0.0);
}

#[test]
fn loss_matches_summed_negative_log_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut data = vec![0.0; 4 * 5];
    for row in data.chunks_mut(5) {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        softmax_row(&z, row);
    }
    let p = Tensor::matrix(4, 5, data).unwrap();
    let y = [2, 4, 3, EOS];
    let want: f64 = y.iter().enumerate().map(|(t, &u)| -p.row(t)[u].ln()).sum();
    assert!((aed_loss(&p, &y).unwrap() - want).abs() < 1e-12);
}

#[test]
fn zero_posterior_at_target_is_domain_error() {
    let p = Tensor::matrix(1, 3, vec![0.5, 0.0, 0.5]).unwrap();
    assert!(matches!(aed_loss(&p, &[EOS]), Err(Error::Domain { .. })));
    assert!(matches!(aed_loss(&p, &[2, EOS]), Err(Error::Contract(_))));
}

#[test]
fn tape_loss_agrees_with_chain_rule_product() {
    let m = toy_model(12, 0.5, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..5 {
        let x = random_x(&mut rng, 6, 4);
        let y = random_labels(&mut rng, 4, 12);
        let mut tape = Tape::new();
        let vars = m.bind_all(&mut tape, |_| false).unwrap();
        let xv = tape.constant(&x);
        let f = aed_forward(&mut tape, xv, &y, &vars).unwrap();
        let loss = aed_loss_tape(&mut tape, f.logits, &y).unwrap();
        let loss = tape.scalar_value(loss);
        let p = posteriors(&tape.tensor(f.logits));
        let log_prod: f64 = y.iter().enumerate().map(|(t, &u)| p.row(t)[u].ln()).sum();
        assert!((-loss - log_prod).abs() < 1e-10);
        assert!((loss - aed_loss(&p, &y).unwrap()).abs() < 1e-10);
        assert!(loss >= 0.0);
    }
}

#[test]
fn aed_loss_passes_gradient_check() {
    let m = toy_model(12, 0.4, 19);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random_x(&mut rng, 6, 4);
    let y = random_labels(&mut rng, 3, 12);
    let report = finite_diff_check(
        |p: &ParamSet, tape: &mut Tape| {
            let b = p.bind(tape);
            let vars = AedVars::bind(tape, &b, &m.dims, "")?;
            let xv = tape.constant(&x);
            let f = aed_forward(tape, xv, &y, &vars)?;
            Ok((aed_loss_tape(tape, f.logits, &y)?, b))
        },
        &m.params,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

// ---- parameters ----

#[test]
fn from_params_checks_names_and_shapes() {
    let m = toy_model(12, 0.1, 20);
    assert!(AedParams::from_params(m.dims.clone(), m.params.clone()).is_ok());
    let mut bad = m.params.clone();
    bad.insert("att.v", Tensor::zeros(&[9]));
    assert!(matches!(
        AedParams::from_params(m.dims.clone(), bad),
        Err(Error::Format(_))
    ));
    let mut extra = m.params.clone();
    extra.insert("stray", Tensor::zeros(&[1]));
    assert!(AedParams::from_params(m.dims.clone(), extra).is_err());
    let mut missing = m.params.clone();
    missing.remove("out.b");
    assert!(AedParams::from_params(m.dims.clone(), missing).is_err());
}

// ---- decoding ----

fn sequence_log_prob(m: &AedParams, x: &Tensor, tokens: &[usize]) -> f64 {
    // Teacher-force an arbitrary prefix (not necessarily eos-terminated).
    let mut tape = Tape::new();
    let vars = m.bind_all(&mut tape, |_| false).unwrap();
    let xv = tape.constant(x);
    let h = encode(&mut tape, xv, &vars.enc).unwrap();
    let mem = attention_memory(&mut tape, h, &vars.dec.att).unwrap();
    let mut state = DecState::initial(&mut tape, &vars.dec);
    let mut prev = SOS;
    let mut total = 0.0;
    for &u in tokens {
        let st = step(&mut tape, &state, prev, &mem, &vars.dec).unwrap();
        let mut lp = vec![0.0; m.dims.vocab];
        log_softmax_row(tape.value(st.logits), &mut lp);
        total += lp[u];
        state = st.state;
        prev = u;
    }
    total
}

fn all_paths(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    // Every eos-terminated sequence up to max_len, plus every eos-free
    // sequence of exactly max_len. sos never appears.
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for p in &frontier {
            let mut done = p.clone();
            done.push(EOS);
            out.push(done);
            for u in 2..vocab {
                let mut q = p.clone();
                q.push(u);
                if len == max_len {
                    out.push(q);
                } else {
                    next.push(q);
                }
            }
        }
        frontier = next;
    }
    out
}

#[test]
fn beam_of_one_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let m = toy_model(12, 1.0, seed);
        let t = rng.random_range(1..8);
        let x = random_x(&mut rng, t, 4);
        let g = greedy_decode(&m, &x, 6).unwrap();
        let b = beam_decode(&m, &x, 1, 6).unwrap();
        assert_eq!(g, b);
        assert!(g.log_prob <= 0.0);
        assert!(!g.tokens.contains(&SOS));
        assert!((g.log_prob - sequence_log_prob(&m, &x, &g.tokens)).abs() < 1e-12);
    }
}

#[test]
fn rigged_eos_model_emits_only_eos() {
    let mut m = toy_model(12, 0.5, 22);
    m.params.get_mut("out.b").unwrap().data_mut()[EOS] = 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_x(&mut rng, 4, 4);
    assert_eq!(greedy_decode(&m, &x, 5).unwrap().tokens, vec![EOS]);
    let b = beam_decode(&m, &x, 4, 5).unwrap();
    assert_eq!(b.tokens, vec![EOS]);
    assert!(b.labels().is_empty());
}

#[test]
fn greedy_truncates_at_max_len() {
    let mut m = toy_model(12, 0.5, 23);
    m.params.get_mut("out.b").unwrap().data_mut()[5] = 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random_x(&mut rng, 4, 4);
    let h = greedy_decode(&m, &x, 3).unwrap();
    assert_eq!(h.tokens, vec![5, 5, 5]);
    assert_eq!(h.labels(), &[5, 5, 5]);
    assert_eq!(beam_decode(&m, &x, 3, 3).unwrap().tokens, vec![5, 5, 5]);
}

#[test]
fn wide_beam_equals_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for (vocab, max_len) in [(5, 2), (6, 2), (5, 3), (6, 3)] {
        for seed in 0..4 {
            let m = toy_model(vocab, 1.5, 100 + seed);
            let x = random_x(&mut rng, 3, 4);
            let mut best: Option<(f64, Vec<usize>)> = None;
            for p in all_paths(vocab, max_len) {
                let lp = sequence_log_prob(&m, &x, &p);
                if best.as_ref().is_none_or(|b| lp > b.0) {
                    best = Some((lp, p));
                }
            }
            let (lp, path) = best.unwrap();
            let width = vocab.pow(max_len as u32 - 1);
            let got = beam_decode(&m, &x, width, max_len).unwrap();
            assert_eq!(got.tokens, path);
            assert!((got.log_prob - lp).abs() < 1e-12);
        }
    }
}

#[test]
fn decode_rejects_zero_sizes() {
    let m = toy_model(12, 0.5, 25);
    let x = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
    assert!(greedy_decode(&m, &x, 0).is_err());
    assert!(beam_decode(&m, &x, 0, 3).is_err());
}
