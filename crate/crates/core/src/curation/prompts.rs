//! Fixed prompt texts and prompt rendering.

use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::corpus::{MaskedInstance, ProblemRecord, ReorderInstance};

pub const THEOREM_EXTRACTION_SYSTEM: &str = r#"You are a helpful assistant.

Task: Extract the most key formulas or theorem names from the following original answer text and save them in JSON format.

Output Format: Return the key formulas or theorem names in a JSON object with the following structure:
{
    "theorems": [
        "Theorem or formula name 1",
        "Theorem or formula name 2",
        "Theorem or formula name 3",
        // Continue until all key formulas or theorem names are included
    ]
}

Requirements:
- Extract only the content from the original text without adding new formulas or theorems.
- Use standard LaTeX format for all mathematical symbols and expressions.
- Sort the extracted theorems by importance, placing the most important ones first and the less important ones later.
- The output must comply with JSON format and be ready for use."#;

pub const STEP_SPLIT_SYSTEM: &str = r#"You are a helpful assistant.

Task: Split the following answer into independent logical steps while maintaining the original meaning of the content.

Output Format: Return the steps in a JSON object with the following structure:
{
    "steps": [
        "Step 1 description...",
        "Step 2 description...",
        "Step 3 description...",
        // Continue until all steps are included
    ]
}

Requirements:
- All steps must be generated from the original answer text without creating new steps or content.
- Each step should maintain an independent logical meaning, allowing it to stand alone.
- The steps should connect logically in a way that reconstructs the original answer when combined together.
- Ensure clarity and conciseness in each step to facilitate understanding.
- Use standard LaTeX format for all mathematical symbols and expressions."#;

pub const MASK_FILL_SYSTEM: &str = r#"A conversation between the User and the Assistant.

The User supplies a mathematical statement together with a partial solution in which some formulas or theorems are masked with <formula_masked> tags.

The Assistant's task is to complete the missing portions of the solution by replacing the <formula_masked> tags with the appropriate mathematical formulas or theorems.

Please adhere to the following structured approach:
    1. Begin by performing a comprehensive logical analysis to determine the precise formula required for each <formula_masked> tag. The objective is to ensure the logical coherence and completeness of the entire solution.

    2. Enclose your **detailed logical analysis**, explaining the derivation of each missing formula, within <think> tags, formatted as follows:
        <think>
          [Your detailed reasoning process, explaining how each missing formula was derived.]
        </think>

    3. Finally, upon completion of the analysis and derivation of all missing formulas, provide **only** the derived formulas, enclosed within \boxed{} notation:
        \boxed{formula_1; formula_2; ...; formula_n}
    The formulas within the \boxed{} answer must appear in the same order as their corresponding <formula_masked> tags in the original solution. All mathematical formulas should be presented using proper LaTeX notation."#;

pub const REORDER_SYSTEM: &str = r#"A conversation between the User and the Assistant.

The User supplies a mathematical statement and a solution whose steps are out of order (each step is already numbered with 'Step i').

The Assistant's task is to determine the correct logical sequence of these steps.

Please adhere to the following structured approach:
    1. Begin by performing a comprehensive logical analysis of the mathematical statement and all given steps to establish their correct sequential order. The objective is to reconstruct a logically sound and complete solution.

    2. Enclose your **detailed logical analysis**, explaining how you determined the correct sequence, within <think> tags, formatted as follows:
        <think>
          [Your detailed reasoning process, explaining how the logical sequence of steps was determined.]
        </think>

    3. Finally, provide **only** the correct sequence of step numbers, enclosed within \boxed{} notation:
        \boxed{n1, n2, n3, \dots, nk}
    The step numbers within the \boxed{} answer must represent the final, logically ordered sequence of the steps."#;

pub const OUTCOME_SYSTEM: &str = r#"A conversation between User and Assistant.

The User provides a question, and the Assistant outputs the answer.

The Assistant's task is to solve the question and provide the final answer.

Please adhere to the following structured approach:
    1. Provide a concise solution analysis to determine how to compute the answer and enclose a detailed, step-by-step derivation within <think> tags. Use the following format:
        <think>
          [Your detailed reasoning process analysis, explained through a step-by-step derivation.]
        </think>

    2. Finally, provide only the final result written in standard LaTeX and enclosed within \boxed{ }."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Mask,
    Reorder,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub kind: PromptKind,
}

#[derive(Debug, Clone, Copy)]
pub enum PromptItem<'a> {
    Masked {
        statement: &'a str,
        instance: &'a MaskedInstance,
    },
    Reorder {
        statement: &'a str,
        instance: &'a ReorderInstance,
    },
    Problem(&'a ProblemRecord),
}

pub fn render_prompt(kind: PromptKind, item: PromptItem<'_>) -> Result<PromptBundle, CurationError> {
    let (system, user) = match (kind, item) {
        (PromptKind::Mask, PromptItem::Masked { statement, instance }) => (
            MASK_FILL_SYSTEM,
            format!(
                "The user's statement: \n{statement}\nThe partial solution is: \n{}",
                instance.masked_text
            ),
        ),
        (PromptKind::Reorder, PromptItem::Reorder { statement, instance }) => (
            REORDER_SYSTEM,
            format!(
                "The user's statement: \n{statement}\nThe shuffled solution:\n{}",
                instance.shuffled_steps.join("\n\n")
            ),
        ),
        (PromptKind::Outcome, PromptItem::Problem(record)) => (
            OUTCOME_SYSTEM,
            format!("The user's question: \n{}", record.statement),
        ),
        _ => return Err(CurationError::KindMismatch),
    };
    Ok(PromptBundle {
        system: system.to_string(),
        user,
        kind,
    })
}
