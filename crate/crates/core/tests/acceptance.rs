//! Acceptance criteria 1-8, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::{experiment, fixture_task, fixtures, ARTIFACTS};
use reframing::calibrate::{argmax, calibrate_scores, CalibrationProfile};
use reframing::harness::{load_tasks, run};
use reframing::lm::MockBackend;
use reframing::metrics::{lcs_length, render_table, rouge_l, TableRow};
use reframing::pipeline::{execute, validate, DecompositionSpec, PipelineStatus};
use reframing::reframe::{apply_operators, reconstruct, rewrite_negation, ReframeConfig};
use reframing::schema::{count_tokens_default, encode_prompt, pack_examples, HeuristicCounter, PromptEncoding};
use reframing::{Example, TaskCategory};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_reframing() -> Check {
    const PATTERN: &str = "Use 'what may happen', 'will ...?', 'why might', 'what may have caused', 'what may be true about', 'what is probably true about', 'what must' and similar phrases in your question based on the input context.";
    const ITEMIZED: &str = "Follow instructions below to produce output based on the given context word.\n- Do <>\n- Do <>\n- Do <>";
    const RESTRAINT: &str = "Answer either Number, Date or Span?";
    const SPECIALIZED: &str = "Calculate answer to the following question. You need to either add or subtract numbers associated with two objects present in the question.";
    const NEGATED: &str = "create questions which are answerable from the paragraph";

    let config = ReframeConfig::load(&fixtures().join("reframe.json")).map_err(|e| e.to_string())?;
    let lexicon = config.lexicon().map_err(|e| e.to_string())?;
    let tasks = load_tasks(&config.task_files).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for (_, task) in &tasks {
        let entry = config.entry(&task.id).ok_or(format!("no entry for {}", task.id))?;
        let r = apply_operators(task, &entry.operators, &lexicon).map_err(|e| e.to_string())?;
        let replayed = reconstruct(task, &r.audit).map_err(|e| e.to_string())?;
        ensure(replayed == r.sections(), || format!("{}: audit replay differs", task.id))?;
        out.insert(task.id.clone(), r);
    }
    let def = |id: &str| out[id].rendered_definition();
    ensure(def("cosmosqa_question_generation") == PATTERN, || format!("pattern: {:?}", def("cosmosqa_question_generation")))?;
    ensure(def("winogrande_sample_generation") == ITEMIZED, || format!("itemizing: {:?}", def("winogrande_sample_generation")))?;
    let drop = &out["drop_answer_type"];
    ensure(drop.constraint.as_deref() == Some(RESTRAINT), || format!("restraining: {:?}", drop.constraint))?;
    ensure(def("drop_answer_type") == fixture_task("drop_answer_type").definition, || "restraining changed the definition".into())?;
    ensure(def("numeric_reasoning") == SPECIALIZED, || format!("specialization: {:?}", def("numeric_reasoning")))?;
    let (negated, _) = rewrite_negation("don't create questions which are not answerable from the paragraph");
    ensure(negated == NEGATED, || format!("negation: {negated:?}"))?;
    let bullets = out["quoref_question_generation"].bullets.clone().unwrap_or_default();
    ensure(bullets.iter().any(|b| b == "Create questions which are answerable from the paragraph."), || {
        format!("negated bullet missing from {bullets:?}")
    })?;
    Ok("pattern, itemizing, restraining and specialization goldens and the negation rewrite match exactly".into())
}

fn decomposition_pipeline() -> Check {
    let lm = MockBackend::from_file(&fixtures().join("mock_pipeline.json"), true).map_err(|e| e.to_string())?;
    let params = Default::default();
    let mut shapes = Vec::new();
    for (id, steps, labels) in [
        ("winogrande_pair_generation", 5, vec!["Question 1", "Answer 1", "Question 2", "Answer 2"]),
        ("quoref_question_generation", 4, vec!["Question", "Answer"]),
    ] {
        let task = fixture_task(id);
        let spec = DecompositionSpec::load(&fixtures().join("decompositions").join(format!("{id}.json")))
            .map_err(|e| e.to_string())?;
        let valid = validate(&spec, &task).map_err(|e| e.to_string())?;
        let trace = execute(&valid, &task.instances[0].inputs, &lm, &params, true);
        ensure(trace.status == PipelineStatus::Completed, || format!("{id}: {:?}", trace.status))?;
        ensure(trace.steps.len() == steps, || format!("{id}: {} steps", trace.steps.len()))?;
        let keys: Vec<&str> = trace.final_output.keys().map(String::as_str).collect();
        ensure(keys == labels, || format!("{id}: final output {keys:?}"))?;
        ensure(trace.final_output.values().all(|v| !v.is_empty()), || format!("{id}: empty final field"))?;
        shapes.push(format!("{id} {steps} steps"));
    }
    Ok(format!("completed traces: {}", shapes.join(", ")))
}

fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subsequence = |sub: &[u8]| {
        let mut it = b.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            is_subsequence(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn rouge_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(11);
    let word = |rng: &mut StdRng| -> Vec<u8> { (0..rng.random_range(0..=10)).map(|_| rng.random_range(0..4u8)).collect() };
    for trial in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (fast, slow) = (lcs_length(&a, &b), brute_force_lcs(&a, &b));
        ensure(fast == slow, || format!("trial {trial}: {a:?} vs {b:?}: {fast} != {slow}"))?;
        let text = |w: &[u8]| w.iter().map(|x| ["w", "x", "y", "z"][*x as usize]).collect::<Vec<_>>().join(" ");
        let (ta, tb) = (text(&a), text(&b));
        let (ab, ba) = (rouge_l(&ta, &[&tb]), rouge_l(&tb, &[&ta]));
        ensure(ab.precision == ba.recall, || format!("duality fails for {ta:?} / {tb:?}"))?;
    }
    ensure(rouge_l("the cat sat", &["the cat sat"]).f1 == 1.0, || "identity".into())?;
    ensure(rouge_l("the cat sat", &["a dog ran"]).f1 == 0.0, || "disjoint".into())?;
    let f1 = rouge_l("the cat sat", &["the cat ran"]).f1;
    ensure((f1 - 2.0 / 3.0).abs() <= 1e-12, || format!("hand case F1 {f1}"))?;
    Ok("1000 random pairs agree with brute force; identity, disjoint, duality and 2/3 hold".into())
}

fn calibration_algebra() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = rng.random_range(2..6);
        let candidates: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let uniform = calibrate_scores(&raw, &CalibrationProfile::uniform(&candidates)).map_err(|e| e.to_string())?;
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
            idx
        };
        ensure(order(&uniform) == order(&raw), || format!("trial {trial}: uniform profile changed the ranking"))?;
        let logits: Vec<Vec<f64>> = vec![(0..n).map(|_| rng.random_range(-4.0..0.0)).collect()];
        let profile = CalibrationProfile::from_scores(&candidates, &logits, "N/A");
        let scale = rng.random_range(0.1..50.0);
        let scaled: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let (a, b) = (
            calibrate_scores(&raw, &profile).map_err(|e| e.to_string())?,
            calibrate_scores(&scaled, &profile).map_err(|e| e.to_string())?,
        );
        ensure(argmax(&a) == argmax(&b), || format!("trial {trial}: scaling by {scale} moved the argmax"))?;
    }
    let profile = CalibrationProfile {
        candidates: vec!["A".into(), "B".into()],
        p_cf: vec![0.8, 0.2],
        content_free_token: "N/A".into(),
        floored: false,
    };
    let q = calibrate_scores(&[0.6, 0.4], &profile).map_err(|e| e.to_string())?;
    // 0.6/0.8 = 0.75 and 0.4/0.2 = 2, normalized by 2.75.
    let expected = [3.0 / 11.0, 8.0 / 11.0];
    ensure((q[0] - expected[0]).abs() <= 1e-9 && (q[1] - expected[1]).abs() <= 1e-9, || format!("flip case {q:?}"))?;
    ensure(argmax(&q) == 1, || "flip case argmax".into())?;
    Ok(format!("neutrality and scaling over 1000 vectors; flip case ({:.4}, {:.4})", q[0], q[1]))
}

fn packing_contract() -> Check {
    let mut rng = StdRng::seed_from_u64(3);
    let mut tasks = Vec::new();
    for id in ["cosmosqa_question_generation", "drop_answer_type", "winogrande_pair_generation"] {
        let mut task = fixture_task(id);
        let base = task.positive_examples.clone();
        // Widen the pool so packing has room to vary.
        for round in 1..4 {
            task.positive_examples.extend(base.iter().map(|e| Example {
                outputs: e.outputs.iter().map(|(k, v)| (k.clone(), format!("{v} ({round})"))).collect(),
                ..e.clone()
            }));
        }
        tasks.push(task);
    }
    for trial in 0..500 {
        let task = &tasks[trial % tasks.len()];
        let encoding = PromptEncoding::table(rng.random_range(1..=12), 0).map_err(|e| e.to_string())?;
        let input = &task.instances[0].inputs;
        let floor = count_tokens_default(&encode_prompt(task, &encoding, &[], input, None).map_err(|e| e.to_string())?);
        let b1 = rng.random_range(floor..floor + 600);
        let b2 = rng.random_range(b1..floor + 900);
        let p1 = pack_examples(task, &encoding, input, None, b1, &HeuristicCounter).map_err(|e| e.to_string())?;
        let p2 = pack_examples(task, &encoding, input, None, b2, &HeuristicCounter).map_err(|e| e.to_string())?;
        for (packed, budget) in [(&p1, b1), (&p2, b2)] {
            let prompt = encode_prompt(task, &encoding, packed, input, None).map_err(|e| e.to_string())?;
            ensure(count_tokens_default(&prompt) <= budget, || format!("trial {trial}: over budget {budget}"))?;
        }
        ensure(p2.len() >= p1.len() && p2[..p1.len()] == p1[..], || format!("trial {trial}: pack({b1}) is not a prefix of pack({b2})"))?;
    }
    Ok("500 randomized trials within budget and prefix-monotone".into())
}

fn offline_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store.jsonl");
    let first = experiment(dir.path().join("first"), store.clone());
    let outcome = run(&first).map_err(|e| e.to_string())?;
    ensure(outcome.records.len() == 12, || format!("{} records", outcome.records.len()))?;

    // Spreadsheet-style recomputation straight from the CSV columns.
    let mut reader = csv::Reader::from_path(dir.path().join("first/records.csv")).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).expect("column");
    let (c_task, c_cat, c_cond, c_f1) = (col("task_id"), col("category"), col("condition"), col("f1"));
    let mut cells: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let f1: f64 = row[c_f1].parse().map_err(|e| format!("{e}"))?;
        cells.entry((row[c_cond].to_string(), row[c_cat].to_string(), row[c_task].to_string())).or_default().push(f1);
    }
    let mut categories: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((cond, cat, _), f1s) in &cells {
        categories.entry((cond.clone(), cat.clone())).or_default().push(100.0 * f1s.iter().sum::<f64>() / f1s.len() as f64);
    }
    for ((cond, cat), means) in &categories {
        let expected = means.iter().sum::<f64>() / means.len() as f64;
        let summary = outcome.report.condition(cond).ok_or(format!("no condition {cond}"))?;
        let category: TaskCategory = cat.parse().map_err(|e| format!("{e:?}"))?;
        let got = summary.category_scores[&category];
        ensure((got - expected).abs() < 1e-9, || format!("{cond}/{cat}: report {got} vs recomputed {expected}"))?;
    }

    let mut second = experiment(dir.path().join("second"), store);
    second.replay_only = true;
    run(&second).map_err(|e| e.to_string())?;
    for name in ARTIFACTS {
        let a = std::fs::read(dir.path().join("first").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("second").join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between the recorded and the replayed run"))?;
    }
    Ok(format!("12 records, {} category means recomputed, replay-only artifacts byte-identical", categories.len()))
}

fn table_rendering() -> Check {
    use TaskCategory::*;
    let cats = [QG, AG, CF, IAG, MM, VF];
    let row = |name: &str, v: [f64; 6]| {
        let scores: Vec<(TaskCategory, f64)> = cats.iter().copied().zip(v).collect();
        TableRow::from_category_scores(name, &scores)
    };
    let raw = row("raw", [43.0, 54.0, 44.0, 21.0, 70.0, 32.0]);
    let reframed = row("reframed", [55.0, 72.0, 65.0, 30.0, 80.0, 48.0]);
    let table = render_table(&[raw, reframed], Some(0));
    let avg_of = |name: &str| -> Option<String> {
        let line = table.lines().find(|l| l.starts_with(&format!("{name} ")))?;
        line.split_whitespace().last().map(|s| s.trim_end_matches(['↑', '↓']).to_string())
    };
    ensure(avg_of("raw").as_deref() == Some("44"), || format!("raw Avg cell in\n{table}"))?;
    ensure(avg_of("reframed").as_deref() == Some("58"), || format!("reframed Avg cell in\n{table}"))?;
    let gain = table.lines().skip_while(|l| !l.starts_with("gain vs")).nth(1).and_then(|l| l.split_whitespace().last());
    ensure(gain == Some("+14"), || format!("gain line in\n{table}"))?;
    Ok("Avg 44 -> 58, gain +14".into())
}

fn main() {
    let started = Instant::now();
    let criteria: [Criterion; 7] = [
        ("golden reframing fixtures", golden_reframing, Duration::from_secs(1)),
        ("decomposition pipeline", decomposition_pipeline, Duration::from_secs(1)),
        ("ROUGE-L oracle equivalence", rouge_oracle, Duration::from_secs(10)),
        ("calibration algebra", calibration_algebra, Duration::from_secs(5)),
        ("packing contract", packing_contract, Duration::from_secs(5)),
        ("end-to-end offline determinism", offline_determinism, Duration::from_secs(10)),
        ("category table rendering regression", table_rendering, Duration::from_secs(1)),
    ];
    let mut failed = 0;
    for (n, (name, check, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = check();
        let elapsed = t.elapsed();
        let result = result.and_then(|msg| {
            if elapsed <= *limit {
                Ok(msg)
            } else {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg} ({} ms)", n + 1, elapsed.as_millis()),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg}", n + 1);
            }
        }
    }
    let total = started.elapsed();
    if failed == 0 && total < Duration::from_secs(60) {
        println!("criterion 8: PASS  offline suite: criteria 1-7 in {} ms against local fixtures and the mock backend", total.as_millis());
    } else {
        failed += 1;
        println!("criterion 8: FAIL  offline suite: {failed} failing criteria, {} ms", total.as_millis());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
