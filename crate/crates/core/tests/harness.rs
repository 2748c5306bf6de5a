use std::fs;

use avsteer::cli::config::RunConfig;
use avsteer::harness::dataset::{
    build_negative_instance, generate_synthetic_dataset, Division, GeneratorSpec, TaskKind,
};
use avsteer::harness::eval::{evaluate, EvalOptions};
use avsteer::harness::metrics::{
    compute_metrics, score_predictions, ConfusionCounts, PredictionRecord,
};
use avsteer::harness::predictions::read_prediction_file;
use avsteer::harness::protocol::{normalize_answer, Answer, Vocabulary};
use avsteer::harness::traces::{load_traces, save_traces, TraceSet};
use avsteer::model::Correctness;
use avsteer::steering::{make_intervention, uniform_schedule, SteeringVector};
use avsteer::tensor::Matrix;
use avsteer::Error;
use proptest::prelude::*;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn yes_instances_carry_their_prototype() {
    let spec = GeneratorSpec::default();
    let ds = generate_synthetic_dataset(&spec, 17).unwrap();
    let names = avsteer::harness::protocol::EVENT_NAMES;
    for inst in &ds.instances {
        let queried = names
            .iter()
            .position(|n| inst.question_text.contains(&format!(" {n} ")))
            .unwrap();
        let span = inst.events.iter().find(|s| s.event == queried);
        match inst.gold {
            Answer::Yes => {
                let span = span.expect("yes-instance holds the queried event");
                let frames = &inst.audio.frames()[span.start..span.start + span.len];
                let mean: Vec<f64> = (0..spec.feature_dim)
                    .map(|j| frames.iter().map(|f| f[j]).sum::<f64>() / frames.len() as f64)
                    .collect();
                assert!(
                    pearson(&mean, &ds.prototypes[queried]) > 0.9,
                    "{}",
                    inst.instance_id
                );
            }
            _ => assert!(span.is_none(), "{}", inst.instance_id),
        }
    }
}

#[test]
fn dataset_is_deterministic_and_validated() {
    let spec = GeneratorSpec::default();
    assert_eq!(
        generate_synthetic_dataset(&spec, 5).unwrap(),
        generate_synthetic_dataset(&spec, 5).unwrap()
    );
    assert_ne!(
        generate_synthetic_dataset(&spec, 5).unwrap(),
        generate_synthetic_dataset(&spec, 6).unwrap()
    );
    let mut bad = spec.clone();
    bad.per_division.popular = 7;
    let err = generate_synthetic_dataset(&bad, 5).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("per_division.popular"));
}

#[test]
fn negative_instance_is_silent_and_idempotent() {
    let ds = generate_synthetic_dataset(&GeneratorSpec::default(), 2).unwrap();
    let inst = &ds.instances[0];
    let neg = build_negative_instance(inst);
    assert!(neg.audio.is_silent());
    assert_eq!(neg.audio.frame_count(), inst.audio.frame_count());
    assert_eq!(neg.question, inst.question);
    assert_eq!(build_negative_instance(&neg), neg);
    inst.contrastive_pair(&Vocabulary::standard()).unwrap();
}

fn small_spec() -> GeneratorSpec {
    let mut spec = GeneratorSpec::default();
    spec.per_division.adversarial = 10;
    spec.per_division.popular = 10;
    spec.per_division.random = 10;
    spec
}

#[test]
fn evaluation_identities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(9, dir.path());
    let model = cfg.build_model().unwrap();
    let ds = generate_synthetic_dataset(&small_spec(), 9)
        .unwrap()
        .instances;
    let vocab = Vocabulary::standard();
    let opts = EvalOptions::default();
    let plain = evaluate(&model, &vocab, &ds, None, &opts).unwrap();

    let sum = plain
        .score
        .divisions
        .iter()
        .fold(ConfusionCounts::default(), |acc, d| acc + d.counts.binary);
    assert_eq!(sum, plain.score.total.counts.binary);
    assert_eq!(plain.score.total.counts.total(), 30);
    for (r, t) in plain.records.iter().zip(&plain.traces.records) {
        assert_eq!(r.instance_id, t.instance_id);
        let want = if r.is_correct() {
            Correctness::Correct
        } else {
            Correctness::Incorrect
        };
        assert_eq!(t.correctness, want);
    }

    let pair = ds[0].contrastive_pair(&vocab).unwrap();
    let vector = avsteer::extract_steering_vector(&model, &pair).unwrap();
    let zero =
        make_intervention(&vector, &uniform_schedule(0.0, model.num_layers()).unwrap()).unwrap();
    let steered = evaluate(&model, &vocab, &ds, Some(&zero), &opts).unwrap();
    assert_eq!(plain.records, steered.records);
    assert_eq!(plain.score, steered.score);
    assert_eq!(plain.traces, steered.traces);
}

#[test]
fn perfect_predictions_score_one() {
    let records: Vec<PredictionRecord> = (0..12)
        .map(|i| {
            let gold = if i % 2 == 0 { Answer::Yes } else { Answer::No };
            PredictionRecord {
                instance_id: format!("i{i}"),
                division: Division::ALL[i % 3].as_str().into(),
                task_kind: TaskKind::Binary,
                gold,
                predicted: gold,
            }
        })
        .collect();
    let s = score_predictions(&records).unwrap();
    assert!(s.rows().all(|d| d.metrics.accuracy == 1.0));
    let all_invalid: Vec<_> = records
        .into_iter()
        .map(|r| PredictionRecord {
            predicted: Answer::Invalid,
            ..r
        })
        .collect();
    assert_eq!(
        score_predictions(&all_invalid)
            .unwrap()
            .total
            .metrics
            .accuracy,
        0.0
    );
}

proptest! {
    #[test]
    fn metric_identities(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        prop_assume!(c.total() > 0);
        let m = compute_metrics(&c).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
        if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-15);
            prop_assert!(f >= p.min(r) - 1e-15 && f <= p.max(r) + 1e-15);
        }
    }

    #[test]
    fn scoring_ignores_record_order(seed in any::<u64>()) {
        use rand::seq::{IndexedRandom, SliceRandom};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let answers = [Answer::Yes, Answer::No, Answer::Invalid];
        let mut records: Vec<PredictionRecord> = (0..30)
            .map(|i| PredictionRecord {
                instance_id: format!("r{i}"),
                division: Division::ALL[i % 3].as_str().into(),
                task_kind: TaskKind::Binary,
                gold: answers[i % 2],
                predicted: *answers.choose(&mut rng).unwrap(),
            })
            .collect();
        let a = score_predictions(&records).unwrap();
        records.shuffle(&mut rng);
        prop_assert_eq!(a, score_predictions(&records).unwrap());
    }

    #[test]
    fn normalization_is_idempotent(text in "[ A-Za-z.!,?]{0,20}") {
        let once = normalize_answer(&text);
        prop_assert_eq!(normalize_answer(&once.to_string()), once);
    }

    #[test]
    fn trace_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 6)) {
        let dir = tempfile::tempdir().unwrap();
        let mut set = TraceSet::new("m", 2, 3);
        set.records.push(avsteer::harness::traces::TraceRecord {
            instance_id: "x".into(),
            correctness: Correctness::Correct,
            channel: "main".into(),
            extraction: Matrix::from_vec(2, 3, values).unwrap(),
            full: None,
        });
        let path = dir.path().join("t.jsonl");
        save_traces(&set, &path).unwrap();
        prop_assert_eq!(load_traces(&path).unwrap(), set);
    }
}

#[test]
fn trace_file_flags_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = TraceSet::new("m", 2, 2);
    for (i, ch) in ["main", "altup-aux"].iter().enumerate() {
        set.records.push(avsteer::harness::traces::TraceRecord {
            instance_id: format!("x{i}"),
            correctness: Correctness::Incorrect,
            channel: ch.to_string(),
            extraction: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            full: None,
        });
    }
    let path = dir.path().join("t.jsonl");
    save_traces(&set, &path).unwrap();
    let loaded = load_traces(&path).unwrap();
    assert_eq!(
        loaded
            .non_main_records()
            .map(|r| r.instance_id.as_str())
            .collect::<Vec<_>>(),
        ["x1"]
    );

    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("\"num_layers\":2", "\"num_layers\":3");
    fs::write(&path, text).unwrap();
    match load_traces(&path).unwrap_err() {
        Error::Ingestion { line, field, .. } => {
            assert_eq!((line, field.as_str()), (2, "extraction"))
        }
        e => panic!("{e}"),
    }

    let text = fs::read_to_string(&path).unwrap();
    let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(
        &path,
        truncated.replace("\"num_layers\":3", "\"num_layers\":2"),
    )
    .unwrap();
    assert!(matches!(load_traces(&path), Err(Error::Ingestion { .. })));
}

#[test]
fn prediction_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    fs::write(
        &path,
        "{\"instance_id\":\"a\",\"division\":\"random\",\"task_kind\":\"binary\",\"gold\":\"yes\",\"predicted_text\":\"Yes.\"}\n\
         {\"instance_id\":\"b\",\"division\":\"random\",\"task_kind\":\"binary\",\"predicted_text\":\"no\"}\n",
    )
    .unwrap();
    match read_prediction_file(&path).unwrap_err() {
        Error::Ingestion { line, field, .. } => assert_eq!((line, field.as_str()), (2, "gold")),
        e => panic!("{e}"),
    }
}

#[test]
fn vector_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let rows = Matrix::from_vec(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.0]).unwrap();
    let v = SteeringVector::new("m", rows).unwrap();
    let path = dir.path().join("v.json");
    v.save(&path).unwrap();
    assert_eq!(SteeringVector::load(&path).unwrap(), v);
}
