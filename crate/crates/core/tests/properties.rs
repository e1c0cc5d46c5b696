use proptest::prelude::*;

use switchkd::corpus::{
    default_task_specs, default_vocab, generate_corpus, read_jsonl, verify_example, write_jsonl,
};
use switchkd::divergence::{jsd, step_divergence, DivergenceKind, DivergenceSpec, ProbVector};
use switchkd::eval::{lcs_len, rouge_l, spearman};
use switchkd::lm::checkpoint::{read_params, write_params};
use switchkd::lm::{Arch, ModelConfig, ModelParams};
use switchkd::numcore::{softmax, LogitsVector, SeededRng};
use switchkd::policy::{generate, load_traces, save_traces, PolicySpec, ThresholdSchedule};

fn dist(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 2..max_len).prop_map(|l| {
        softmax(&LogitsVector::new(l).unwrap(), 1.0)
            .unwrap()
            .into_inner()
    })
}

fn pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max_len).prop_flat_map(|n| {
        let v = || prop::collection::vec(-8.0f64..8.0, n);
        (v(), v()).prop_map(|(a, b)| {
            let s = |l: Vec<f64>| {
                softmax(&LogitsVector::new(l).unwrap(), 1.0)
                    .unwrap()
                    .into_inner()
            };
            (s(a), s(b))
        })
    })
}

proptest! {
    #[test]
    fn divergences_are_nonnegative((p, q) in pair(40)) {
        let (p, q) = (ProbVector::new(p).unwrap(), ProbVector::new(q).unwrap());
        for kind in DivergenceKind::ALL {
            let d = step_divergence(&p, &q, &DivergenceSpec::new(kind)).unwrap();
            prop_assert!(d.is_finite() && d >= 0.0, "{kind}: {d}");
        }
    }

    #[test]
    fn jsd_is_a_bounded_symmetric_bit_measure((p, q) in pair(40)) {
        let (p, q) = (ProbVector::new(p).unwrap(), ProbVector::new(q).unwrap());
        let a = jsd(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - jsd(&q, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_a_distribution_with_itself_vanishes(p in dist(40)) {
        let p = ProbVector::new(p).unwrap();
        for kind in DivergenceKind::ALL {
            prop_assert!(step_divergence(&p, &p, &DivergenceSpec::new(kind)).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn lcs_is_symmetric_and_bounded(
        a in prop::collection::vec(0usize..4, 0..30),
        b in prop::collection::vec(0usize..4, 0..30),
    ) {
        let l = lcs_len(&a, &b);
        prop_assert_eq!(l, lcs_len(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
        let r = rouge_l(&a, &b);
        prop_assert!((0.0..=1.0).contains(&r.f1));
        prop_assert_eq!(r.f1, rouge_l(&b, &a).f1);
    }

    #[test]
    fn rouge_of_a_sequence_with_itself_is_one(a in prop::collection::vec(0usize..5, 1..40)) {
        prop_assert_eq!(rouge_l(&a, &a).f1, 1.0);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-100.0f64..100.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        if let Ok(r) = spearman(&xs, &ys) {
            prop_assert!((r - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((spearman(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), attn in any::<bool>(), hidden in 1usize..6) {
        let cfg = ModelConfig {
            arch: if attn { Arch::Attn1 } else { Arch::Gru },
            vocab_size: 7,
            embed_dim: 3,
            hidden_dim: hidden,
            context_len: 9,
        };
        let m = ModelParams::init(cfg, &mut SeededRng::new(seed)).unwrap();
        let mut buf = Vec::new();
        write_params(&m, &mut buf).unwrap();
        let back = read_params(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.flatten(), m.flatten());
        prop_assert_eq!(back.config(), m.config());
        prop_assert!(read_params(&mut &buf[..buf.len() - 1]).is_err());
    }
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let vocab = default_vocab();
    let specs: Vec<_> = default_task_specs()
        .into_iter()
        .map(|mut s| {
            s.count = 5;
            s
        })
        .collect();
    let corpus = generate_corpus(&specs, &vocab, 80, &mut SeededRng::new(3)).unwrap();
    assert!(corpus.iter().all(|ex| verify_example(ex, &vocab).unwrap()));
    let mut buf = Vec::new();
    write_jsonl(&corpus, &vocab, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice(), &vocab).unwrap(), corpus);
}

#[test]
fn traces_round_trip_bit_exactly() {
    let cfg = ModelConfig {
        arch: Arch::Gru,
        vocab_size: 10,
        embed_dim: 4,
        hidden_dim: 6,
        context_len: 40,
    };
    let teacher = ModelParams::init(cfg, &mut SeededRng::new(1)).unwrap();
    let student = ModelParams::init(cfg, &mut SeededRng::new(2)).unwrap();
    let spec = PolicySpec {
        max_new_tokens: 20,
        ..PolicySpec::switch(ThresholdSchedule::exp_decay(0.1))
    };
    let traces: Vec<_> = (0..5)
        .map(|i| {
            generate(
                &teacher,
                &student,
                &[3, 4],
                &spec,
                2,
                &mut SeededRng::new(i),
            )
            .unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    save_traces(&traces, &path).unwrap();
    assert_eq!(load_traces(&path).unwrap(), traces);
    assert!(traces.iter().all(|t| t.obeys_switch_rule()));
}
