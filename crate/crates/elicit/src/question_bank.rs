//! The fixed question bank: an ordered list of skills, each of which can be
//! rendered as a counterfactual interview question.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical counterfactual phrasing. One template keeps the response
/// vocabulary closed.
pub const PROMPT_TEMPLATE: &str = "Suppose you also had the skill '{skill}'. Describe yourself.";

const DEFAULT_BANK_JSON: &str = include_str!("default_bank.json");

#[derive(Debug, Error)]
pub enum BankError {
    #[error("malformed bank: {0}")]
    MalformedBank(String),
    #[error("unknown question id {0}")]
    UnknownQuestion(usize),
    #[error("failed to read bank file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse bank file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One question in the bank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: usize,
    pub skill_name: String,
    pub prompt_template: String,
}

/// On-disk schema: `{"target_skill": ..., "skills": [...]}`.
#[derive(Serialize, Deserialize)]
struct BankFile {
    target_skill: String,
    skills: Vec<String>,
}

/// The fixed question set and the skill the interview tries to elicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    questions: Vec<QuestionSpec>,
    target_skill: String,
}

impl QuestionBank {
    /// Builds a bank from a skill list, assigning ids by position.
    pub fn new(target_skill: &str, skills: &[String]) -> Result<Self, BankError> {
        let target = target_skill.trim().to_lowercase();
        let mut seen = BTreeSet::new();
        let mut questions = Vec::with_capacity(skills.len());
        for (id, raw) in skills.iter().enumerate() {
            let skill = raw.trim().to_lowercase();
            if skill.is_empty() {
                return Err(BankError::MalformedBank(format!("empty skill at index {id}")));
            }
            if !seen.insert(skill.clone()) {
                return Err(BankError::MalformedBank(format!("duplicate skill '{skill}'")));
            }
            questions.push(QuestionSpec {
                id,
                skill_name: skill,
                prompt_template: PROMPT_TEMPLATE.to_string(),
            });
        }
        if questions.len() < 2 {
            return Err(BankError::MalformedBank(format!(
                "bank needs at least 2 skills, got {}",
                questions.len()
            )));
        }
        if !seen.contains(&target) {
            return Err(BankError::MalformedBank(format!(
                "target skill '{target}' not in skill list"
            )));
        }
        Ok(QuestionBank {
            questions,
            target_skill: target,
        })
    }

    /// The 30-skill default bank with target "leadership".
    pub fn default_bank() -> &'static QuestionBank {
        static BANK: OnceLock<QuestionBank> = OnceLock::new();
        BANK.get_or_init(|| {
            parse_bank(DEFAULT_BANK_JSON).expect("embedded default bank is valid")
        })
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn target_skill(&self) -> &str {
        &self.target_skill
    }

    pub fn question(&self, id: usize) -> Result<&QuestionSpec, BankError> {
        self.questions.get(id).ok_or(BankError::UnknownQuestion(id))
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    /// Ordered skill vocabulary (the bank's own skills).
    pub fn skills(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.skill_name.clone()).collect()
    }

    /// Id of the target skill's question.
    pub fn target_id(&self) -> usize {
        self.questions
            .iter()
            .position(|q| q.skill_name == self.target_skill)
            .expect("target skill is always in the bank")
    }

    /// Serializes back to the bank-file schema.
    pub fn to_json(&self) -> String {
        let file = BankFile {
            target_skill: self.target_skill.clone(),
            skills: self.skills(),
        };
        serde_json::to_string_pretty(&file).expect("bank serialization cannot fail")
    }
}

/// Loads a bank from a JSON file, assigning ids in file order.
pub fn load_bank(path: &Path) -> Result<QuestionBank, BankError> {
    let raw = std::fs::read_to_string(path)?;
    parse_bank(&raw)
}

fn parse_bank(raw: &str) -> Result<QuestionBank, BankError> {
    let file: BankFile = serde_json::from_str(raw)?;
    QuestionBank::new(&file.target_skill, &file.skills)
}

/// Renders the question text for one id. Pure function of (bank, id).
pub fn render_question(bank: &QuestionBank, id: usize) -> Result<String, BankError> {
    let q = bank.question(id)?;
    Ok(q.prompt_template.replace("{skill}", &q.skill_name))
}
