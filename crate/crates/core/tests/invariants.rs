//! Property tests for cross-module invariants.

use std::sync::Arc;

use markfeed::agreement::{krippendorff_alpha, Level, RatingMatrix};
use markfeed::corpus::{CorpusRecord, Position, EOS};
use markfeed::metrics::{bleu, ksmr, EffortRecord};
use markfeed::model::{
    backward, beam_search, normalized_score, sequence_log_prob, step_log_probs, BeamConfig,
    ModelConfig, ModelParams, Precision,
};
use markfeed::planner::{assign, ids, Mode};
use markfeed::service::{
    replay, Clock, ManualClock, NextItem, Service, ServiceData, SubmitRequest,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64, vs: usize, vt: usize, e: usize, h: usize, scale: f64) -> ModelParams {
    let mut p = ModelParams::init(ModelConfig {
        src_vocab_size: vs,
        trg_vocab_size: vt,
        embed_dim: e,
        hidden_dim: h,
        seed,
        precision: Precision::F64,
    })
    .unwrap();
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v *= scale);
    }
    p
}

fn sentences() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
    prop::collection::vec(
        (
            prop::collection::vec(0u8..5, 1..8),
            prop::collection::vec(0u8..5, 1..8),
        ),
        1..6,
    )
}

fn ratings() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (2usize..4).prop_flat_map(|raters| {
        prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.85, 0.0f64..10.0), raters),
            2..8,
        )
    })
}

fn alpha(values: &[Vec<Option<f64>>]) -> Option<f64> {
    let units = (0..values.len()).map(|i| format!("u{i}")).collect();
    let raters = (0..values[0].len()).map(|i| format!("r{i}")).collect();
    krippendorff_alpha(&RatingMatrix::new(units, raters, values.to_vec(), Level::Interval).ok()?)
        .ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_ignores_sentence_order(pairs in sentences(), seed in any::<u64>()) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hp: Vec<_> = order.iter().map(|&i| h[i].clone()).collect();
        let rp: Vec<_> = order.iter().map(|&i| r[i].clone()).collect();
        prop_assert_eq!(bleu(&h, &r).unwrap(), bleu(&hp, &rp).unwrap());
    }

    #[test]
    fn pooled_ksmr_is_ratio_of_sums(
        a in (0u64..500, 0u64..50, 1u64..400),
        b in (0u64..500, 0u64..50, 1u64..400),
    ) {
        let rec = |(k, m, c): (u64, u64, u64)| EffortRecord {
            sentence_id: "s".into(),
            keystrokes: k,
            mouse_actions: m,
            duration_ms: 0,
            reference_chars: c,
        };
        let (ra, rb) = (rec(a), rec(b));
        let pooled = ksmr(&ra.merge(&rb)).unwrap();
        let expect = (a.0 + a.1 + b.0 + b.1) as f64 / (a.2 + b.2) as f64;
        prop_assert!((pooled - expect).abs() <= 1e-12 * expect.max(1.0));
        // the pooled ratio lies between the parts
        let (ka, kb) = (ksmr(&ra).unwrap(), ksmr(&rb).unwrap());
        prop_assert!(pooled >= ka.min(kb) - 1e-12 && pooled <= ka.max(kb) + 1e-12);
    }

    #[test]
    fn agreeing_unit_at_the_mean_scales_disagreement(values in ratings()) {
        let Some(before) = alpha(&values) else { return Ok(()) };
        let pairable: Vec<f64> = values
            .iter()
            .filter(|u| u.iter().flatten().count() >= 2)
            .flat_map(|u| u.iter().flatten().copied())
            .collect();
        let n = pairable.len() as f64;
        let mean = pairable.iter().sum::<f64>() / n;
        let m = values[0].len() as f64;
        let mut more = values.clone();
        more.push(vec![Some(mean); values[0].len()]);
        let after = alpha(&more).unwrap();
        // observed disagreement shrinks by n/(n+m), expected by (n-1)/(n+m-1)
        let expect = 1.0 - (1.0 - before) * n * (n + m - 1.0) / ((n + m) * (n - 1.0));
        prop_assert!((after - expect).abs() < 1e-9, "{} -> {} (expected {})", before, after, expect);
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn beam_is_bounded_by_exhaustive_search(seed in 0u64..1000, w in 1usize..6, x in prop::collection::vec(4usize..8, 1..4)) {
        let (vt, max_len) = (6usize, 3usize);
        let p = tiny(seed, 8, vt, 3, 4, 10.0);
        // every EOS-terminated sequence up to max_len, plus unfinished ones of length max_len
        let mut best = f64::NEG_INFINITY;
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for len in 1..=max_len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for tok in 0..vt {
                    let mut s = prefix.clone();
                    s.push(tok);
                    if tok == EOS || len == max_len {
                        let lp = sequence_log_prob(&p, &x, &s).unwrap();
                        best = best.max(normalized_score(lp, s.len(), 1.0));
                    }
                    if tok != EOS {
                        next.push(s);
                    }
                }
            }
            frontier = next;
        }
        let cfg = |width| BeamConfig { width, length_penalty: 1.0, max_len };
        let (_, got) = beam_search(&p, &x, &cfg(w)).unwrap();
        prop_assert!(got <= best + 1e-12, "width {}: {} above optimum {}", w, got, best);
        let (_, full) = beam_search(&p, &x, &cfg(vt.pow(max_len as u32))).unwrap();
        prop_assert!((full - best).abs() < 1e-12, "{} vs {}", full, best);
    }

    #[test]
    fn raising_a_token_weight_raises_its_probability_after_a_step(
        seed in 0u64..1000,
        t in 0usize..4,
        bump in 0.1f64..2.0,
        base in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let p = tiny(seed, 8, 8, 4, 4, 5.0);
        let (x, y) = ([4, 6, 5], [5, 7, 4, EOS]);
        let mut raised = base.clone();
        raised[t] += bump;
        // one plain gradient-ascent step on the weighted log-likelihood
        let step = |w: &[f64]| {
            let (_, g) = backward(&p, &x, &y, w).unwrap();
            let mut q = p.clone();
            q.add_scaled(1e-4, &g);
            step_log_probs(&q, &x, &y).unwrap()[t]
        };
        prop_assert!(step(&raised) >= step(&base) - 1e-12);
    }

    #[test]
    fn every_annotator_gets_three_parts_per_position(seed in any::<u64>()) {
        let plan = assign(&ids("talk", 12), &ids("ann", 4), seed).unwrap();
        prop_assert_eq!(&plan, &assign(&ids("talk", 12), &ids("ann", 4), seed).unwrap());
        for ann in ids("ann", 4) {
            for pos in Position::ALL {
                let n = plan.entries.iter().filter(|e| e.annotator_id == ann && e.part == pos).count();
                prop_assert_eq!(n, 3, "{} {:?}", ann, pos);
            }
        }
    }
}

fn service_data() -> ServiceData {
    let mut recs = Vec::new();
    for t in ids("talk", 9) {
        for p in Position::ALL {
            for k in 0..2 {
                recs.push(CorpusRecord {
                    id: format!("{t}-{p}-{k}"),
                    src: format!("quelle {k} satz ."),
                    trg: Some(format!("reference {k} .")),
                    talk_id: t.clone(),
                    position: Some(p),
                    topic: "science".into(),
                    hyp: Some(format!("hypothesis words {k} .")),
                });
            }
        }
    }
    let plan = assign(&ids("talk", 9), &ids("ann", 3), 1).unwrap();
    ServiceData::build(&recs, &plan, &[recs[0].id.clone(), recs[7].id.clone()]).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Next(usize),
    Submit(usize),
    Pause(usize),
    Resume(usize),
    Wait(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0usize..3).prop_map(Op::Next),
        3 => (0usize..3).prop_map(Op::Submit),
        1 => (0usize..3).prop_map(Op::Pause),
        1 => (0usize..3).prop_map(Op::Resume),
        2 => (1u64..5000).prop_map(Op::Wait),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn service_is_append_only_and_replayable(ops in prop::collection::vec(op(), 1..80)) {
        let dir = tempfile::tempdir().unwrap();
        let data = service_data();
        let clock = Arc::new(ManualClock::new(0));
        let svc = Service::open(dir.path(), data.clone(), clock.clone() as Arc<dyn Clock>, 5).unwrap();
        let anns = ids("ann", 3);
        let mut nonce = 0;
        for op in ops {
            let before = svc.state().annotations;
            match op {
                Op::Next(a) => {
                    if let Ok(NextItem::Item(v)) = svc.next_item(&anns[a]) {
                        prop_assert!(data.queues[&anns[a]].iter().any(|q| q.sentence_id == v.sentence_id));
                    }
                }
                Op::Submit(a) => {
                    if let Ok(NextItem::Item(v)) = svc.next_item(&anns[a]) {
                        let mode = if v.instruction_mode == Mode::Choice { Mode::Marking } else { v.instruction_mode };
                        nonce += 1;
                        let req = SubmitRequest {
                            sentence_id: v.sentence_id.clone(),
                            mode: v.instruction_mode,
                            chosen_mode: (v.instruction_mode == Mode::Choice).then_some(mode),
                            flags: (mode == Mode::Marking).then(|| vec![false; v.hypothesis_tokens.len()]),
                            edited_text: (mode == Mode::Postedit).then(|| "edited .".to_string()),
                            keystrokes: 3,
                            mouse_actions: 1,
                            nonce: format!("n{nonce}"),
                        };
                        let _ = svc.submit(&anns[a], req);
                    }
                }
                Op::Pause(a) => { let _ = svc.pause(&anns[a]); }
                Op::Resume(a) => { let _ = svc.resume(&anns[a]); }
                Op::Wait(ms) => clock.advance(ms),
            }
            let after = svc.state().annotations;
            prop_assert!(after.len() >= before.len());
            prop_assert_eq!(&after[..before.len()], &before[..]);
            for a in &after {
                let rec = EffortRecord {
                    sentence_id: a.sentence_id.clone(),
                    keystrokes: a.keystrokes,
                    mouse_actions: a.mouse_actions,
                    duration_ms: a.duration_ms,
                    reference_chars: data.items[&a.sentence_id].reference_chars,
                };
                prop_assert!(ksmr(&rec).is_ok());
            }
        }
        let live = svc.state();
        drop(svc);
        prop_assert_eq!(replay(dir.path(), &data).unwrap(), live);
    }
}
