mod common;

use proptest::prelude::*;

use common::fixture_task;
use reframing::calibrate::{argmax, calibrate_scores, softmax, CalibrationProfile};
use reframing::lm::MockBackend;
use reframing::metrics::{lcs_length, rouge_l};
use reframing::pipeline::{execute, parse_labeled_output, validate, DecompositionSpec, PipelineStatus};
use reframing::reframe::{itemize, mine_patterns, reconstruct, restrain, specialize, SpecializationSpec};
use reframing::schema::{
    count_tokens_default, encode_prompt, pack_examples, parse_task_file, render_outputs, HeuristicCounter,
    PromptEncoding,
};
use reframing::{Example, FieldMap, TaskCategory, TaskInstruction};

const WORDS: &[&str] = &["write", "a", "question", "about", "the", "passage", "answer", "short", "use", "names"];

fn sentence() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["", "Don't ", "Do not ", "Never "]),
        prop::collection::vec(prop::sample::select(WORDS), 1..7),
        any::<bool>(),
    )
        .prop_map(|(neg, words, not)| {
            let mut s = format!("{neg}{}", words.join(" "));
            if not {
                s.push_str(" that is not clear");
            }
            let mut chars = s.chars();
            let first = chars.next().map(|c| c.to_uppercase().collect::<String>()).unwrap_or_default();
            format!("{first}{}.", chars.as_str())
        })
}

fn definition() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..6).prop_map(|s| s.join(" "))
}

fn task_with(definition: String) -> TaskInstruction {
    TaskInstruction { definition, ..fixture_task("cosmosqa_question_generation") }
}

fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..1 << a.len() {
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = best.max(sub.len());
        }
    }
    best
}

fn value() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..6).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lcs_matches_brute_force(a in prop::collection::vec(0u8..4, 0..9), b in prop::collection::vec(0u8..4, 0..9)) {
        let n = lcs_length(&a, &b);
        prop_assert_eq!(n, brute_force_lcs(&a, &b));
        prop_assert_eq!(n, lcs_length(&b, &a));
        prop_assert!(n <= a.len().min(b.len()));
    }

    #[test]
    fn rouge_bounds_and_identity(a in value(), b in value()) {
        let s = rouge_l(&a, &[&b]);
        prop_assert!((0.0..=1.0).contains(&s.f1));
        prop_assert_eq!(rouge_l(&a, &[&a]).f1, 1.0);
        prop_assert_eq!(s.precision, rouge_l(&b, &[&a]).recall);
        // Adding a reference never lowers the score.
        prop_assert!(rouge_l(&a, &[&b, &a]).f1 >= s.f1);
    }

    #[test]
    fn calibration_is_scale_invariant(raw in prop::collection::vec(0.01f64..1.0, 2..6), scale in 0.1f64..100.0, seed in any::<u64>()) {
        let n = raw.len();
        let candidates: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let logits: Vec<f64> = (0..n).map(|i| -(((seed >> (i * 7)) % 50) as f64) / 10.0).collect();
        let profile = CalibrationProfile::from_scores(&candidates, &[logits], "N/A");
        let q = calibrate_scores(&raw, &profile).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let q2 = calibrate_scores(&scaled, &profile).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(argmax(&q), argmax(&q2));
        for (x, y) in q.iter().zip(&q2) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let neutral = calibrate_scores(&raw, &CalibrationProfile::uniform(&candidates)).unwrap();
        prop_assert_eq!(argmax(&neutral), argmax(&raw));
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..0.0, 1..8)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }

    #[test]
    fn packing_respects_budget_and_prefix(id in 1u8..=12, extra1 in 0usize..400, extra2 in 0usize..400) {
        let mut task = fixture_task("drop_answer_type");
        let pool = task.positive_examples.clone();
        task.positive_examples = pool.iter().cycle().take(9).cloned().collect();
        let encoding = PromptEncoding::table(id, 0).unwrap();
        let input = task.instances[0].inputs.clone();
        let floor = count_tokens_default(&encode_prompt(&task, &encoding, &[], &input, None).unwrap());
        let (b1, b2) = (floor + extra1.min(extra2), floor + extra1.max(extra2));
        let p1 = pack_examples(&task, &encoding, &input, None, b1, &HeuristicCounter).unwrap();
        let p2 = pack_examples(&task, &encoding, &input, None, b2, &HeuristicCounter).unwrap();
        prop_assert!(count_tokens_default(&encode_prompt(&task, &encoding, &p1, &input, None).unwrap()) <= b1);
        prop_assert!(p1.len() <= p2.len());
        prop_assert_eq!(&p2[..p1.len()], &p1[..]);
        prop_assert!(pack_examples(&task, &encoding, &input, None, floor - 1, &HeuristicCounter).is_err());
    }

    #[test]
    fn encoding_is_deterministic_and_cued(id in 1u8..=12, n in 0usize..4) {
        let task = fixture_task("cosmosqa_question_generation");
        let encoding = PromptEncoding::table(id, n).unwrap();
        let examples = &task.positive_examples[..n.min(task.positive_examples.len())];
        let input = &task.instances[0].inputs;
        let a = encode_prompt(&task, &encoding, examples, input, Some("Be brief.")).unwrap();
        let b = encode_prompt(&task, &encoding, examples, input, Some("Be brief.")).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.ends_with("Question:"));
        prop_assert!(a.contains(&task.definition));
    }

    #[test]
    fn itemize_audit_replays_and_is_idempotent(def in definition()) {
        let task = task_with(def);
        let once = itemize(&task);
        prop_assert_eq!(reconstruct(&task, &once.audit).unwrap(), once.sections());
        let reframed = once.apply_to(&task);
        let twice = itemize(&reframed);
        prop_assert_eq!(twice.rendered_definition(), once.rendered_definition());
    }

    #[test]
    fn specialize_leads_with_directive(def in definition(), marker in prop::sample::select(WORDS)) {
        let task = task_with(def);
        let spec = SpecializationSpec { directive: "Count the objects.".into(), drop_sections: vec![], drop_sentence_markers: vec![marker.to_string()] };
        let r = specialize(&task, &spec).unwrap();
        prop_assert!(r.definition.starts_with("Count the objects."));
        prop_assert_eq!(reconstruct(&task, &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn restrain_only_adds_a_constraint(def in definition(), labels in prop::collection::btree_set("[A-Z][a-z]{2,6}", 1..5)) {
        let task = task_with(def);
        let space: Vec<String> = labels.into_iter().collect();
        let r = restrain(&task, &space).unwrap();
        prop_assert_eq!(r.apply_to(&task), task.clone());
        let constraint = r.constraint.clone().unwrap();
        prop_assert!(constraint.starts_with("Answer ") && constraint.ends_with('?'));
        for label in &space {
            prop_assert!(constraint.contains(label.as_str()));
        }
        prop_assert_eq!(reconstruct(&task, &r.audit).unwrap(), r.sections());
    }

    #[test]
    fn mined_patterns_recount(outputs in prop::collection::vec(value(), 1..8), max_ngram in 1usize..4, min_count in 1usize..3) {
        let examples: Vec<Example> = outputs
            .iter()
            .map(|o| Example {
                inputs: FieldMap::from([("Context".to_string(), "c".to_string())]),
                outputs: FieldMap::from([("Question".to_string(), o.clone())]),
                explanation: None,
            })
            .collect();
        if let Ok(lib) = mine_patterns(&examples, "Question", max_ngram, min_count) {
            for p in lib.patterns() {
                let grams: Vec<&str> = p.split(' ').collect();
                prop_assert!(grams.len() <= max_ngram);
                let count = outputs.iter().filter(|o| o.split(' ').take(grams.len()).eq(grams.iter().copied())).count();
                prop_assert!(count >= min_count, "pattern {p:?} occurs {count} times");
            }
        }
    }

    #[test]
    fn labeled_output_round_trip(values in prop::collection::vec(value(), 1..5)) {
        let labels: Vec<String> = (1..=values.len()).map(|i| format!("Field {i}")).collect();
        let fields: FieldMap = labels.iter().cloned().zip(values.iter().cloned()).collect();
        let text = if labels.len() == 1 { format!("{}: {}", labels[0], values[0]) } else { render_outputs(&labels, &fields) };
        prop_assert_eq!(parse_labeled_output(&text, &labels).unwrap(), fields);
    }

    #[test]
    fn validation_matches_binding_oracle(choices in prop::collection::vec(0usize..5, 3), final_choice in 0usize..4) {
        // Three chained subtasks; each input draws from a menu of sources, some invalid.
        let task = TaskInstruction {
            input_labels: vec!["Passage".into()],
            output_labels: vec!["Question".into()],
            category: TaskCategory::QG,
            ..fixture_task("cosmosqa_question_generation")
        };
        let menu = |step: usize, choice: usize| -> (String, bool) {
            match choice {
                0 => ("input:Passage".into(), true),
                1 => ("input:Context".into(), false),
                2 => ("s0.Out".into(), step > 0),
                3 => ("s1.Out".into(), step > 1),
                _ => ("s9.Out".into(), false),
            }
        };
        let mut expected_ok = true;
        let mut subtasks = Vec::new();
        for (step, choice) in choices.iter().enumerate() {
            let (from, ok) = menu(step, *choice);
            expected_ok &= ok;
            subtasks.push(serde_json::json!({
                "name": format!("s{step}"), "instruction": "Do it.",
                "inputs": [{"field": "In", "from": from}], "outputs": ["Out"]
            }));
        }
        let (final_from, ok) = menu(3, final_choice.min(3));
        expected_ok &= ok && final_from != "input:Passage";
        let doc = serde_json::json!({
            "task_id": task.id, "subtasks": subtasks,
            "final": [{"output_label": "Question", "from": final_from}]
        });
        let spec = DecompositionSpec::from_json(&doc.to_string()).unwrap();
        let result = validate(&spec, &task);
        prop_assert_eq!(result.is_ok(), expected_ok, "{:?}", result.err());
        if let Ok(valid) = result {
            let lm = MockBackend::echo();
            let input = FieldMap::from([("Passage".to_string(), "text".to_string())]);
            let trace = execute(&valid, &input, &lm, &Default::default(), false);
            prop_assert_eq!(trace.status, PipelineStatus::Completed);
        }
    }

    #[test]
    fn task_documents_round_trip(def in definition(), avoid in proptest::option::of(sentence())) {
        let task = TaskInstruction { definition: def, things_to_avoid: avoid, ..fixture_task("drop_answer_type") };
        prop_assert_eq!(parse_task_file(&task.to_json()).unwrap().task, task);
    }
}
