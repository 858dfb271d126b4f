use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlsqkt_core::autodiff::{grad_check_params, sigmoid, Tape};
use tlsqkt_core::data::{Batch, Window};
use tlsqkt_core::layers::Mode;
use tlsqkt_core::model::{extract_trajectories, Model, ModelDims, ModelError, VariantKind};
use tlsqkt_core::train::{batch_gradients, bce_loss_masked, fit_batch, AdamConfig};
use tlsqkt_core::parallel::Execution;

const N_Q: usize = 6;
const N_KC: usize = 4;
const N_L: usize = 3;

fn dims(d: usize, max_seq_len: usize) -> ModelDims {
    ModelDims {
        n_questions: N_Q,
        n_kcs: N_KC,
        n_literacy: N_L,
        embed_dim: d,
        hidden_dim: d,
        model_dim: d,
        n_heads: 2,
        max_seq_len,
    }
}

fn model(variant: VariantKind, d: usize, seed: u64) -> Model {
    Model::new(variant, dims(d, 20), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn window(rng: &mut ChaCha8Rng, id: &str, len: usize) -> Window {
    let question: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=N_Q)).collect();
    Window {
        student_id: id.into(),
        start: 0,
        kc: question.iter().map(|q| (q - 1) % N_KC + 1).collect(),
        literacy: question.iter().map(|q| (q - 1) % N_L + 1).collect(),
        correct: (0..len).map(|_| rng.gen_range(0..=1)).collect(),
        question,
    }
}

fn batch(ws: &[Window]) -> Batch {
    let refs: Vec<&Window> = ws.iter().collect();
    Batch::from_windows(&refs)
}

fn probs(m: &Model, b: &Batch) -> Vec<f64> {
    m.predict(b).unwrap()
}

#[test]
fn zero_parameters_predict_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = batch(&[window(&mut rng, "a", 7), window(&mut rng, "b", 4)]);
    for v in VariantKind::ALL {
        let mut m = model(v, 8, 2);
        m.store_mut().fill(0.0);
        assert!(probs(&m, &b).iter().all(|&p| p == 0.5), "{v}");
    }
}

#[test]
fn shape_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = batch(&[window(&mut rng, "a", 20), window(&mut rng, "b", 20)]);
    let m = model(VariantKind::Full, 16, 4);
    let out = m.forward(&b, &mut Mode::Eval).unwrap();
    assert_eq!(out.probs.shape(), &[2, 20]);
    assert!(out.probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let (a, be, g) = out.channel_scores.unwrap();
    for s in [a, be, g] {
        assert_eq!(s.shape(), &[2, 20]);
        assert!(s.data().iter().all(|x| x.is_finite()));
    }
    assert_eq!(out.literacy_states.unwrap().shape(), &[2, 20, 16]);
}

/// Changes every response from step `k` on and every id from step `k + 1`
/// on. Predictions at positions `< k` (which target steps `<= k`) must not
/// move.
fn perturb_after(w: &Window, k: usize, rng: &mut ChaCha8Rng) -> Window {
    let mut p = w.clone();
    for s in k..p.question.len() {
        p.correct[s] = rng.gen_range(0..=1);
        if s > k {
            let q = rng.gen_range(1..=N_Q);
            p.question[s] = q;
            p.kc[s] = (q - 1) % N_KC + 1;
            p.literacy[s] = (q - 1) % N_L + 1;
        }
    }
    p
}

#[test]
fn no_variant_reads_the_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in VariantKind::ALL {
        let m = model(v, 8, 6);
        for _ in 0..20 {
            let ws = vec![window(&mut rng, "a", 9), window(&mut rng, "b", 6)];
            let k = rng.gen_range(1..6);
            let moved: Vec<Window> = ws.iter().map(|w| perturb_after(w, k, &mut rng)).collect();
            let (p0, p1) = (probs(&m, &batch(&ws)), probs(&m, &batch(&moved)));
            let steps = 9;
            for row in 0..2 {
                for t in 0..k {
                    let i = row * steps + t;
                    assert_eq!(p0[i].to_bits(), p1[i].to_bits(), "{v} row {row} t {t} k {k}");
                }
            }
        }
    }
}

#[test]
fn padding_steps_never_change_valid_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = window(&mut rng, "a", 5);
    for v in VariantKind::ALL {
        let m = model(v, 8, 8);
        let short = probs(&m, &batch(std::slice::from_ref(&w)));
        let padded = Batch::with_steps(&[&w], 12);
        let long = probs(&m, &padded);
        for t in 0..4 {
            assert_eq!(short[t].to_bits(), long[t].to_bits(), "{v}");
        }
    }
}

#[test]
fn permuting_students_permutes_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ws: Vec<Window> = (0..3).map(|i| window(&mut rng, &format!("s{i}"), 6)).collect();
    let perm = [2, 0, 1];
    let shuffled: Vec<Window> = perm.iter().map(|&i| ws[i].clone()).collect();
    for v in VariantKind::ALL {
        let m = model(v, 8, 10);
        let (a, b) = (probs(&m, &batch(&ws)), probs(&m, &batch(&shuffled)));
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert_eq!(a[old_row * 6..old_row * 6 + 6], b[new_row * 6..new_row * 6 + 6], "{v}");
        }
    }
}

#[test]
fn zero_combine_weights_give_a_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = batch(&[window(&mut rng, "a", 8), window(&mut rng, "b", 8)]);
    let mut m = model(VariantKind::Full, 8, 12);
    let p = m.tlsqkt().unwrap().clone();
    m.store_mut().get_mut(p.combine_w).data_mut().fill(0.0);
    m.store_mut().get_mut(p.combine_b).data_mut()[0] = 0.3;
    assert!(probs(&m, &b).iter().all(|&x| x == sigmoid(0.3)));
}

fn zero_positions(m: &mut Model) {
    let p = m.tlsqkt().unwrap().clone();
    for id in [p.pos_question, p.pos_ability, p.pos_application] {
        m.store_mut().get_mut(id).data_mut().fill(0.0);
    }
}

#[test]
fn question_channel_embedding_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut m = model(VariantKind::Full, 4, 14);
    zero_positions(&mut m);
    let p = m.tlsqkt().unwrap().clone();
    let w = window(&mut rng, "a", 4);
    let mut flipped = w.clone();
    flipped.correct[2] = 1 - flipped.correct[2];
    let twin = Window {
        student_id: "b".into(),
        ..w.clone()
    };

    let b = Batch::with_steps(&[&w, &flipped, &twin], 5);
    let mut tape = Tape::new();
    let e = p.embed_question_channel(&mut tape, m.store(), &b).unwrap();
    assert_eq!(tape.shape(e), &[3, 5, 12]);
    let v = tape.value(e);
    let row = |r: usize, t: usize| &v[(r * 5 + t) * 12..(r * 5 + t + 1) * 12];
    // padded step is zero before positions
    assert!(row(0, 4).iter().all(|&x| x == 0.0));
    // identical inputs, identical embedding
    for t in 0..5 {
        assert_eq!(row(0, t), row(2, t));
    }
    // flipping r_2 touches only the response slice at step 2
    for t in 0..5 {
        let (a, f) = (row(0, t), row(1, t));
        assert_eq!(a[..8], f[..8]);
        if t == 2 {
            assert_ne!(a[8..], f[8..]);
        } else {
            assert_eq!(a[8..], f[8..]);
        }
    }
}

#[test]
fn literacy_channel_ignores_questions() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut m = model(VariantKind::Full, 4, 16);
    zero_positions(&mut m);
    let p = m.tlsqkt().unwrap().clone();
    let w = window(&mut rng, "a", 4);
    let mut other_q = w.clone();
    other_q.question = other_q.question.iter().map(|q| q % N_Q + 1).collect();
    let b = Batch::with_steps(&[&w, &other_q], 5);
    let mut tape = Tape::new();
    let mv = p.embed_literacy_channel(&mut tape, m.store(), &b).unwrap();
    let v = tape.value(mv);
    assert_eq!(v[..5 * 8], v[5 * 8..]);
    assert!(v[4 * 8..5 * 8].iter().all(|&x| x == 0.0));
}

#[test]
fn application_channel_alignment_and_reach() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut m = model(VariantKind::Full, 4, 18);
    let p = m.tlsqkt().unwrap().clone();
    let b = batch(&[window(&mut rng, "a", 5)]);

    // y_t depends on b_t but not on b_{t+1}
    let states: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut later = states.clone();
    for x in &mut later[12..] {
        *x += 0.5;
    }
    let run = |s: Vec<f64>| {
        let mut tape = Tape::new();
        let sv = tape.constant(s, &[1, 5, 4]).unwrap();
        let y = p.embed_application_channel(&mut tape, m.store(), sv, &b).unwrap();
        tape.value(y).to_vec()
    };
    let (y0, y1) = (run(states.clone()), run(later));
    assert_eq!(y0[..12], y1[..12]);
    assert_ne!(y0[12..16], y1[12..16]);

    // gradient of y reaches the ability LSTM
    {
        let mut tape = Tape::new();
        let mv = p.embed_literacy_channel(&mut tape, m.store(), &b).unwrap();
        let s = p.ability_lstm.forward(&mut tape, m.store(), mv, &b.step_mask).unwrap();
        let y = p.embed_application_channel(&mut tape, m.store(), s, &b).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let by_id: BTreeMap<_, _> = grads.params().into_iter().collect();
        for id in p.ability_lstm.weights {
            assert!(by_id[&id].iter().any(|&g| g != 0.0));
        }
    }

    // zero states and zero projection give zero y
    zero_positions(&mut m);
    let proj = m.tlsqkt().unwrap().app_proj;
    m.store_mut().get_mut(proj).data_mut().fill(0.0);
    let mut tape = Tape::new();
    let sv = tape.constant(vec![0.0; 20], &[1, 5, 4]).unwrap();
    let y = p.embed_application_channel(&mut tape, m.store(), sv, &b).unwrap();
    assert!(tape.value(y).iter().all(|&x| x == 0.0));
}

#[test]
fn variant_construction() {
    let count = |v| model(v, 8, 1).n_params();
    let names = |v| -> Vec<String> {
        model(v, 8, 1)
            .store()
            .iter()
            .map(|(_, n, _)| n.to_string())
            .collect()
    };
    assert!(count(VariantKind::WoOutput) < count(VariantKind::Full));
    assert!(!names(VariantKind::WoOutput).iter().any(|n| n.contains("_tf.")));
    assert!(names(VariantKind::WoAdd).iter().any(|n| n.contains("_mlp.")));
    assert_eq!(count(VariantKind::WoHead), count(VariantKind::Full));
    let wo_head = model(VariantKind::WoHead, 8, 1);
    assert_eq!(wo_head.tlsqkt().unwrap().question.tf.as_ref().unwrap().n_heads, 1);
    assert_eq!(model(VariantKind::Full, 8, 1).tlsqkt().unwrap().question.tf.as_ref().unwrap().n_heads, 2);
}

#[test]
fn wo_output_gives_attention_nothing_to_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let b = batch(&[window(&mut rng, "a", 6), window(&mut rng, "b", 6)]);
    let m = model(VariantKind::WoOutput, 8, 20);
    let (_, grads) = batch_gradients(&m, &b, 0.0, 8, (0, 0, 0), Execution::Sequential).unwrap();
    assert_eq!(grads.grads.len(), m.store().len());
    assert!(m.store().iter().all(|(_, n, _)| !n.contains("_tf.")));
}

#[test]
fn malformed_batch_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut b = batch(&[window(&mut rng, "a", 6)]);
    b.targets[1] = 1.0 - b.targets[1];
    let m = model(VariantKind::Full, 8, 22);
    assert!(matches!(m.predict(&b), Err(ModelError::Batch(_))));
}

fn overfit(variant: VariantKind) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ws: Vec<Window> = (0..4).map(|i| window(&mut rng, &format!("s{i}"), 12)).collect();
    let b = batch(&ws);
    let mut m = model(variant, 16, 24);
    let adam = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let losses = fit_batch(&mut m, &b, 200, &adam, 0.0, 0).unwrap();
    let (last, _) = batch_gradients(&m, &b, 0.0, 4, (0, 0, 0), Execution::Sequential).unwrap();
    assert!(losses[4] < losses[0]);
    last
}

#[test]
fn full_model_memorises_a_toy_batch() {
    let loss = overfit(VariantKind::Full);
    assert!(loss < 0.15, "{loss}");
}

#[test]
fn dkt_memorises_a_toy_batch() {
    let loss = overfit(VariantKind::DktBaseline);
    assert!(loss < 0.15, "{loss}");
}

// Init seed whose ReLU pre-activations all stay farther than h from zero,
// so central differences do not straddle a kink.
const GRAD_SEED: u64 = 27;

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let b = batch(&[window(&mut rng, "a", 4), window(&mut rng, "b", 3)]);
    for v in VariantKind::ALL {
        let m = Model::new(v, dims(8, 4), &mut ChaCha8Rng::seed_from_u64(GRAD_SEED)).unwrap();
        let err = grad_check_params(
            |tape, store| -> Result<_, ModelError> {
                let out = m.forward_vars_with(store, tape, &b, &mut Mode::Eval)?;
                Ok(bce_loss_masked(tape, out.probs, &b.targets, &b.valid_mask)?)
            },
            m.store(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{v}: {err}");
    }
}

#[test]
fn trajectories_of_a_flat_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut ws = vec![window(&mut rng, "a", 5), window(&mut rng, "b", 3)];
    ws[1].start = 20;
    let mut m = model(VariantKind::Full, 8, 28);
    let p = m.tlsqkt().unwrap().clone();
    m.store_mut().get_mut(p.combine_w).data_mut().fill(0.0);
    let probes: BTreeMap<usize, Vec<usize>> = (1..=N_L).map(|l| (l, vec![l, l + N_L])).collect();
    let t = extract_trajectories(&m, &ws, &probes, 4).unwrap();
    assert_eq!(t.rows.len(), N_L * (5 + 3));
    assert!(t.rows.iter().all(|r| r.prob == 0.5));
    assert_eq!(t.states.len(), 8);
    let b_steps: Vec<usize> = t.rows.iter().filter(|r| r.student_id == "b").map(|r| r.step).collect();
    assert_eq!(b_steps.first(), Some(&20));
    assert_eq!(b_steps.last(), Some(&22));

    let bad: BTreeMap<usize, Vec<usize>> = [(N_L + 5, vec![1])].into();
    assert!(extract_trajectories(&m, &ws, &bad, 4).is_err());
    let dkt = model(VariantKind::DktBaseline, 8, 1);
    assert!(extract_trajectories(&dkt, &ws, &probes, 4).is_err());
}

#[test]
fn trajectory_matches_single_step_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let ws = vec![window(&mut rng, "a", 6), window(&mut rng, "b", 4)];
    let m = model(VariantKind::Full, 8, 32);
    let probes: BTreeMap<usize, Vec<usize>> = [(2, vec![2, 5]), (3, vec![])].into();
    let t = extract_trajectories(&m, &ws, &probes, 2).unwrap();
    let b = batch(&ws);
    let mut k = 0;
    for (r, w) in ws.iter().enumerate() {
        for step in 0..w.len() {
            for (&dim, qs) in &probes {
                let qs = if qs.is_empty() { vec![0] } else { qs.clone() };
                let mut expect = 0.0;
                for &q in &qs {
                    let mut p = b.clone();
                    let i = r * b.steps + step;
                    p.q_next[i] = q;
                    p.l_next[i] = dim;
                    let mut tape = Tape::new();
                    let v = m.forward_unchecked(&mut tape, &p, &mut Mode::Eval).unwrap();
                    expect += tape.value(v.probs)[i] / qs.len() as f64;
                }
                let row = &t.rows[k];
                assert_eq!((row.student_id.as_str(), row.step, row.literacy_id), (w.student_id.as_str(), step, dim));
                assert!((row.prob - expect).abs() < 1e-12, "{} {step} {dim}", w.student_id);
                k += 1;
            }
        }
    }
    assert_eq!(k, t.rows.len());
}
