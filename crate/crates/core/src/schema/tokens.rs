use super::{encode_prompt, Example, FieldMap, PromptEncoding, SchemaError, TaskInstruction};

/// Pluggable token counter; swap in a real tokenizer when one is available.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace-separated words plus every non-alphanumeric, non-whitespace character.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicCounter;

impl TokenCounter for HeuristicCounter {
    fn count(&self, text: &str) -> usize {
        count_tokens_default(text)
    }
}

pub fn count_tokens_default(text: &str) -> usize {
    let words = text.split_whitespace().count();
    let punct = text
        .chars()
        .filter(|c| !c.is_alphanumeric() && !c.is_whitespace())
        .count();
    words + punct
}

/// Greedy file-order prefix of the task's positive examples that keeps the
/// encoded prompt within `token_budget`. The constraint sentence, when given,
/// is part of the counted prompt.
pub fn pack_examples(
    task: &TaskInstruction,
    encoding: &PromptEncoding,
    new_input: &FieldMap,
    constraint: Option<&str>,
    token_budget: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<Example>, SchemaError> {
    let examples = &task.positive_examples;
    let size = |n: usize| -> Result<usize, SchemaError> {
        let prompt = encode_prompt(task, encoding, &examples[..n], new_input, constraint)?;
        Ok(counter.count(&prompt))
    };
    let needed = size(0)?;
    if token_budget == 0 || needed > token_budget {
        return Err(SchemaError::BudgetTooSmall { needed, budget: token_budget });
    }
    let mut fitted = 0;
    while fitted < examples.len() && size(fitted + 1)? <= token_budget {
        fitted += 1;
    }
    Ok(examples[..fitted].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counter() {
        assert_eq!(count_tokens_default(""), 0);
        assert_eq!(count_tokens_default("hello world"), 2);
        // 2 words + apostrophe + period
        assert_eq!(count_tokens_default("don't stop."), 4);
        assert_eq!(count_tokens_default("  \n\t "), 0);
    }

    fn five_example_task() -> TaskInstruction {
        let examples = (1..=5)
            .map(|i| Example {
                inputs: [("Context".to_string(), format!("context number {i} is here"))].into_iter().collect(),
                outputs: [("Question".to_string(), format!("what is {i}?"))].into_iter().collect(),
                explanation: None,
            })
            .collect();
        TaskInstruction {
            id: "five".into(),
            title: "five".into(),
            definition: "Write a question.".into(),
            emphasis_caution: None,
            things_to_avoid: None,
            prompt_line: None,
            category: crate::TaskCategory::QG,
            input_labels: vec!["Context".into()],
            output_labels: vec!["Question".into()],
            positive_examples: examples,
            instances: vec![],
        }
    }

    fn new_input() -> FieldMap {
        [("Context".to_string(), "a new context".to_string())].into_iter().collect()
    }

    #[test]
    fn packs_all_when_unconstrained() {
        let t = five_example_task();
        let enc = PromptEncoding::table(1, 5).unwrap();
        let packed = pack_examples(&t, &enc, &new_input(), None, 10_000, &HeuristicCounter).unwrap();
        assert_eq!(packed.len(), 5);
    }

    #[test]
    fn packs_exactly_two() {
        let t = five_example_task();
        let enc = PromptEncoding::table(1, 5).unwrap();
        // Independent recount: words + punctuation of each k-example prompt, built by hand.
        let counts: Vec<usize> = (0..=5)
            .map(|k| {
                let mut text = String::from("Write a question.");
                for i in 1..=k {
                    text.push_str(&format!("\n\nContext: context number {i} is here\nQuestion: what is {i}?"));
                }
                text.push_str("\n\nContext: a new context\nQuestion:");
                let words = text.split_whitespace().count();
                let punct = text.chars().filter(|c| c.is_ascii_punctuation()).count();
                words + punct
            })
            .collect();
        // 0 examples: 8 words + 3 punct; each example adds 10 words + 3 punct.
        assert_eq!(counts, vec![11, 24, 37, 50, 63, 76]);
        let budget = (counts[2] + counts[3]) / 2;
        let packed = pack_examples(&t, &enc, &new_input(), None, budget, &HeuristicCounter).unwrap();
        assert_eq!(packed, t.positive_examples[..2].to_vec());
        let exact = pack_examples(&t, &enc, &new_input(), None, counts[2], &HeuristicCounter).unwrap();
        assert_eq!(exact.len(), 2);
    }

    #[test]
    fn budget_too_small() {
        let t = five_example_task();
        let enc = PromptEncoding::table(1, 5).unwrap();
        let err = pack_examples(&t, &enc, &new_input(), None, 5, &HeuristicCounter).unwrap_err();
        assert_eq!(err, SchemaError::BudgetTooSmall { needed: 11, budget: 5 });
    }
}
