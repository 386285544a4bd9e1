//! Seeded persona simulator: a deterministic replacement for an LLM
//! respondent. Personas carry ground-truth skills plus Big-5 traits, and
//! their self-summaries under- or over-report those skills depending on a
//! trait-derived modesty scalar. All outputs are pure functions of
//! (persona, inputs, seed).

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::question_bank::{QuestionBank, QuestionSpec};
use crate::text::{self, StyleMarkers};
use crate::transcript::Transcript;

const STREAM_INITIAL: u64 = 0x11;
const STREAM_RESPOND: u64 = 0x22;
const STREAM_PROFILE: u64 = 0x33;

/// Expected boast tokens per response at extroversion 1.
const BOAST_RATE: f64 = 2.5;
/// Expected hedge tokens per response at (agreeableness+neuroticism)/2 = 1.
const HEDGE_RATE: f64 = 2.5;
/// Expected filler tokens per response at full filler disposition.
const FILLER_RATE: f64 = 2.0;
/// Follow-up responses are a bit terser than the initial summary.
const FOLLOWUP_SCALE: f64 = 0.8;
/// Chance that a genuinely held skill is re-mentioned in a follow-up,
/// before modesty suppression.
const REMENTION_DAMP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("failed to read persona file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed persona file: {0}")]
    MalformedPersonaFile(String),
}

/// Trait indices into `Persona::traits`.
pub const OPENNESS: usize = 0;
pub const CONSCIENTIOUSNESS: usize = 1;
pub const EXTROVERSION: usize = 2;
pub const AGREEABLENESS: usize = 3;
pub const NEUROTICISM: usize = 4;

/// A synthetic individual: ground truth plus presentation style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: u64,
    pub true_skills: BTreeSet<String>,
    pub has_target: bool,
    pub traits: [f64; 5],
    pub modesty: f64,
    pub seed: u64,
}

impl Persona {
    /// Builds a persona, deriving `has_target` and `modesty` so the type
    /// invariants hold by construction.
    pub fn build(
        id: u64,
        true_skills: BTreeSet<String>,
        traits: [f64; 5],
        seed: u64,
        target_skill: &str,
    ) -> Persona {
        let has_target = true_skills.contains(target_skill);
        Persona {
            id,
            true_skills,
            has_target,
            traits,
            modesty: modesty_of(&traits),
            seed,
        }
    }
}

/// Modesty rises with agreeableness and falls with extroversion.
pub fn modesty_of(traits: &[f64; 5]) -> f64 {
    (1.0 - traits[EXTROVERSION] + traits[AGREEABLENESS]) / 2.0
}

/// One free-text answer plus the structure recovered from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub text: String,
    pub mentioned_skills: BTreeSet<String>,
    pub style_markers: StyleMarkers,
}

impl Response {
    /// Builds a response from raw text, recounting markers and re-parsing
    /// skill mentions so the stored structure always matches the text.
    /// `vocab` is the bank's skill list.
    pub fn from_text(text: &str, vocab: &[String]) -> Response {
        let tokens = text::tokenize(text);
        let mentions = text::parse_mentions(&tokens, &text::vocab_tokens(vocab));
        Response {
            text: text.to_string(),
            mentioned_skills: mentions.all(),
            style_markers: text::count_markers(&tokens),
        }
    }
}

/// Simulator knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Probability that a sampled persona holds the target skill.
    pub prevalence: f64,
    /// Per-skill inclusion probability for non-target skills.
    pub skill_prob: f64,
    /// How strongly modesty suppresses skill mentions, in [0,1].
    pub suppression_weight: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            prevalence: 0.2,
            skill_prob: 0.25,
            suppression_weight: 0.6,
        }
    }
}

/// Anything that can play the respondent role: sample an individual and
/// answer questions in their voice.
pub trait ResponseSimulator {
    fn sample_persona(&self, seed: u64) -> Persona;
    fn initial_summary(&self, p: &Persona) -> Response;
    fn respond(&self, p: &Persona, q: &QuestionSpec, history: &Transcript) -> Response;
}

/// The standard trait-driven simulator over a question bank's vocabulary.
#[derive(Clone, Debug)]
pub struct Simulator {
    bank: QuestionBank,
    cfg: SimConfig,
}

impl Simulator {
    pub fn new(bank: QuestionBank, cfg: SimConfig) -> Simulator {
        Simulator { bank, cfg }
    }

    pub fn bank(&self) -> &QuestionBank {
        &self.bank
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn mention_prob(&self, p: &Persona) -> f64 {
        1.0 - p.modesty * self.cfg.suppression_weight
    }

    /// Maps one structured profile record onto a persona. Traits are not
    /// part of the profile format, so they are drawn from a stream seeded
    /// by the profile identity.
    pub fn persona_from_profile(&self, profile: &ProfileRecord, index: u64) -> Persona {
        let seed = profile
            .prompt_id
            .unwrap_or_else(|| text::fnv1a(profile.full_name.as_deref().unwrap_or("").as_bytes()));
        let mut rng = ChaCha8Rng::seed_from_u64(text::mix_seed(seed, &[STREAM_PROFILE]));
        let traits = [
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
        ];
        let skills: BTreeSet<String> = profile
            .skill_list()
            .into_iter()
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        Persona::build(index, skills, traits, seed, self.bank.target_skill())
    }
}

/// Integer draw with expectation exactly `x` (stochastic rounding).
fn stoch_round(rng: &mut ChaCha8Rng, x: f64) -> usize {
    let x = x.max(0.0);
    (x + rng.gen::<f64>()).floor() as usize
}

/// A short seeded sentence of neutral workday vocabulary. Keeps responses
/// from being templated down to the token level.
fn chatter_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=6usize);
    let words: Vec<&str> = (0..n)
        .map(|_| text::CHATTER_TOKENS[rng.gen_range(0..text::CHATTER_TOKENS.len())])
        .collect();
    format!("my days involve {}", words.join(" "))
}

/// Deterministic marker-token picker: cycles a class list from an offset.
fn marker_cycle(list: &[&str], offset: usize, n: usize) -> Vec<String> {
    (0..n).map(|i| list[(offset + i) % list.len()].to_string()).collect()
}

struct MarkerBudget {
    boasts: Vec<String>,
    hedges: Vec<String>,
    fillers: Vec<String>,
}

fn draw_markers(rng: &mut ChaCha8Rng, traits: &[f64; 5], scale: f64) -> MarkerBudget {
    let boast_n = stoch_round(rng, scale * BOAST_RATE * traits[EXTROVERSION]);
    let hedge_n = stoch_round(
        rng,
        scale * HEDGE_RATE * (traits[AGREEABLENESS] + traits[NEUROTICISM]) / 2.0,
    );
    let filler_n = stoch_round(
        rng,
        scale * FILLER_RATE * (traits[OPENNESS] + (1.0 - traits[CONSCIENTIOUSNESS])) / 2.0,
    );
    let offset = rng.gen_range(0..4usize);
    MarkerBudget {
        boasts: marker_cycle(&text::BOAST_TOKENS, offset, boast_n),
        hedges: marker_cycle(&text::HEDGE_TOKENS, offset, hedge_n),
        fillers: marker_cycle(&text::FILLER_TOKENS, offset, filler_n),
    }
}

/// Assembles the final text: fillers up front, boasts attached to claim
/// sentences, hedges in a closing clause.
fn compose(
    markers: MarkerBudget,
    opener: &str,
    claims: Vec<String>,
    hypothetical: Option<String>,
) -> String {
    let mut parts: Vec<String> = Vec::new();
    if !markers.fillers.is_empty() {
        parts.push(markers.fillers.join(" "));
    }
    parts.push(opener.to_string());
    let mut boasts = markers.boasts.into_iter();
    for claim in claims {
        match boasts.next() {
            Some(b) => parts.push(format!("{b} {claim}")),
            None => parts.push(claim),
        }
    }
    if let Some(h) = hypothetical {
        parts.push(h);
    }
    let leftover: Vec<String> = boasts.collect();
    if !leftover.is_empty() {
        parts.push(format!("i {} bring value", leftover.join(" ")));
    }
    if !markers.hedges.is_empty() {
        parts.push(format!("{} there is more i could share", markers.hedges.join(" ")));
    }
    parts.join(" . ") + " ."
}

impl ResponseSimulator for Simulator {
    /// Draws a persona. Trait vector first, then the target coin, then
    /// per-skill inclusion coins in bank order.
    fn sample_persona(&self, seed: u64) -> Persona {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traits = [
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
            rng.gen::<f64>(),
        ];
        let has_target = rng.gen_bool(self.cfg.prevalence.clamp(0.0, 1.0));
        let target = self.bank.target_skill().to_string();
        let mut skills = BTreeSet::new();
        for q in self.bank.questions() {
            if q.skill_name == target {
                continue;
            }
            if rng.gen_bool(self.cfg.skill_prob.clamp(0.0, 1.0)) {
                skills.insert(q.skill_name.clone());
            }
        }
        if has_target {
            skills.insert(target.clone());
        }
        Persona::build(seed, skills, traits, seed, &target)
    }

    fn initial_summary(&self, p: &Persona) -> Response {
        let mut rng = ChaCha8Rng::seed_from_u64(text::mix_seed(p.seed, &[STREAM_INITIAL]));
        let markers = draw_markers(&mut rng, &p.traits, 1.0);
        let mention_prob = self.mention_prob(p);
        let mut claims = vec![chatter_sentence(&mut rng)];
        for skill in &p.true_skills {
            if rng.gen::<f64>() < mention_prob {
                claims.push(format!("i am skilled in {skill}"));
            }
        }
        let t = compose(markers, "i am a dedicated professional", claims, None);
        Response::from_text(&t, &self.bank.skills())
    }

    fn respond(&self, p: &Persona, q: &QuestionSpec, history: &Transcript) -> Response {
        let mut rng = ChaCha8Rng::seed_from_u64(text::mix_seed(
            p.seed,
            &[STREAM_RESPOND, q.id as u64, history.len() as u64],
        ));
        let markers = draw_markers(&mut rng, &p.traits, FOLLOWUP_SCALE);
        let held = p.true_skills.contains(&q.skill_name);
        let suppressed = rng.gen::<f64>() < p.modesty * self.cfg.suppression_weight;

        let mut claims = Vec::new();
        let mut hypothetical = None;
        if held && !suppressed {
            claims.push(format!("i am skilled in {} and use it daily", q.skill_name));
        } else if held {
            // Suppressed holders still answer truthfully, just without
            // putting the claim forward; the phrasing stays below the
            // mention parser's triggers.
            claims.push(format!("i have worked with {} before", q.skill_name));
        } else {
            hypothetical = Some(format!("if i had {} i could contribute more", q.skill_name));
        }
        let remention_prob = self.mention_prob(p) * REMENTION_DAMP;
        for skill in &p.true_skills {
            if *skill == q.skill_name {
                continue;
            }
            if rng.gen::<f64>() < remention_prob {
                claims.push(format!("i am skilled in {skill}"));
            }
        }
        claims.push(chatter_sentence(&mut rng));
        let opener = format!("thinking about {}", q.skill_name);
        let t = compose(markers, &opener, claims, hypothetical);
        Response::from_text(&t, &self.bank.skills())
    }
}

/// One record of the structured-profile import format. Unknown keys are
/// ignored by serde's default behavior.
#[derive(Debug, Default, Deserialize)]
pub struct ProfileRecord {
    #[serde(default)]
    pub prompt_id: Option<u64>,
    #[serde(default)]
    pub full_name: Option<String>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub industry: Option<String>,
    #[serde(default)]
    pub job_title: Option<String>,
    #[serde(default)]
    pub skills: Option<SkillsField>,
    #[serde(default)]
    pub summary: Option<String>,
}

/// Profile skills arrive either as an array or a comma-joined string.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SkillsField {
    List(Vec<String>),
    Joined(String),
}

impl ProfileRecord {
    fn skill_list(&self) -> Vec<String> {
        match &self.skills {
            Some(SkillsField::List(v)) => v.clone(),
            Some(SkillsField::Joined(s)) => s.split(',').map(str::to_string).collect(),
            None => Vec::new(),
        }
    }
}

/// Persona-file record: `{"id": int, "skills": [...], "traits": [5 floats], "seed": int}`.
#[derive(Debug, Deserialize)]
struct PersonaRecord {
    id: u64,
    skills: Vec<String>,
    traits: [f64; 5],
    seed: u64,
}

/// Loads personas from JSON lines. Accepts both the persona schema and the
/// structured-profile schema (detected per line by the presence of a
/// `traits` field).
pub fn load_personas(path: &Path, sim: &Simulator) -> Result<Vec<Persona>, SimulatorError> {
    let raw = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            SimulatorError::MalformedPersonaFile(format!("line {}: {e}", lineno + 1))
        })?;
        if value.get("traits").is_some() {
            let rec: PersonaRecord = serde_json::from_value(value).map_err(|e| {
                SimulatorError::MalformedPersonaFile(format!("line {}: {e}", lineno + 1))
            })?;
            let skills = rec
                .skills
                .into_iter()
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            out.push(Persona::build(
                rec.id,
                skills,
                rec.traits,
                rec.seed,
                sim.bank().target_skill(),
            ));
        } else {
            let rec: ProfileRecord = serde_json::from_value(value).map_err(|e| {
                SimulatorError::MalformedPersonaFile(format!("line {}: {e}", lineno + 1))
            })?;
            out.push(sim.persona_from_profile(&rec, lineno as u64));
        }
    }
    if out.is_empty() {
        return Err(SimulatorError::MalformedPersonaFile(
            "no persona records found".to_string(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulator {
        Simulator::new(QuestionBank::default_bank().clone(), SimConfig::default())
    }

    fn fixed_persona(traits: [f64; 5], skills: &[&str], seed: u64) -> Persona {
        Persona::build(
            seed,
            skills.iter().map(|s| s.to_string()).collect(),
            traits,
            seed,
            "leadership",
        )
    }

    #[test]
    fn prevalence_is_respected_over_many_draws() {
        let s = sim();
        let n = 10_000;
        let hits = (0..n).filter(|i| s.sample_persona(*i).has_target).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.2).abs() <= 0.01, "target frequency {freq}");
    }

    #[test]
    fn zero_prevalence_never_has_target() {
        let s = Simulator::new(
            QuestionBank::default_bank().clone(),
            SimConfig {
                prevalence: 0.0,
                ..SimConfig::default()
            },
        );
        assert!((0..500).all(|i| !s.sample_persona(i).has_target));
    }

    #[test]
    fn same_seed_gives_identical_persona_and_responses() {
        let s = sim();
        let a = s.sample_persona(99);
        let b = s.sample_persona(99);
        assert_eq!(a, b);
        assert_eq!(s.initial_summary(&a), s.initial_summary(&b));
        let q = s.bank().question(2).unwrap().clone();
        let hist = Transcript::new();
        assert_eq!(s.respond(&a, &q, &hist), s.respond(&b, &q, &hist));
    }

    #[test]
    fn modesty_zero_mentions_all_true_skills() {
        let s = sim();
        // extroversion 1, agreeableness 0 -> modesty 0
        let p = fixed_persona([0.5, 0.5, 1.0, 0.0, 0.5], &["sales", "leadership"], 7);
        assert_eq!(p.modesty, 0.0);
        let r = s.initial_summary(&p);
        assert!(r.mentioned_skills.contains("sales"));
        assert!(r.mentioned_skills.contains("leadership"));
    }

    #[test]
    fn full_suppression_mentions_nothing_but_text_remains() {
        let s = Simulator::new(
            QuestionBank::default_bank().clone(),
            SimConfig {
                suppression_weight: 1.0,
                ..SimConfig::default()
            },
        );
        // extroversion 0, agreeableness 1 -> modesty 1
        let p = fixed_persona([0.5, 0.5, 0.0, 1.0, 0.5], &["sales", "leadership"], 11);
        assert_eq!(p.modesty, 1.0);
        let r = s.initial_summary(&p);
        assert!(r.mentioned_skills.is_empty());
        assert!(!r.text.is_empty());
    }

    #[test]
    fn target_holder_affirms_when_immodest() {
        let s = sim();
        let p = fixed_persona([0.5, 0.5, 1.0, 0.0, 0.5], &["leadership"], 0);
        let q = s.bank().question(2).unwrap().clone();
        let r = s.respond(&p, &q, &Transcript::new());
        assert!(r.text.contains("i am skilled in leadership"));
        assert!(r.mentioned_skills.contains("leadership"));
    }

    #[test]
    fn non_holder_answers_hypothetically() {
        let s = sim();
        let p = fixed_persona([0.5, 0.5, 1.0, 0.0, 0.5], &["sales"], 0);
        let q = s.bank().question(2).unwrap().clone();
        let r = s.respond(&p, &q, &Transcript::new());
        assert!(r.text.contains("if i had leadership"));
        assert!(r.mentioned_skills.contains("leadership"));
        assert!(!r.text.contains("i am skilled in leadership"));
    }

    #[test]
    fn stored_markers_match_recount() {
        let s = sim();
        for seed in 0..50 {
            let p = s.sample_persona(seed);
            let r = s.initial_summary(&p);
            let recounted = text::count_markers(&text::tokenize(&r.text));
            assert_eq!(r.style_markers, recounted);
            assert!(r.mentioned_skills.is_subset(&p.true_skills));
        }
    }

    #[test]
    fn modesty_suppresses_mentions_negatively() {
        let s = sim();
        let n = 1_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let p = s.sample_persona(seed);
            if p.true_skills.is_empty() {
                continue;
            }
            let r = s.initial_summary(&p);
            xs.push(p.modesty);
            ys.push(r.mentioned_skills.len() as f64 / p.true_skills.len() as f64);
        }
        let corr = pearson(&xs, &ys);
        assert!(corr < 0.0, "corr(modesty, mention rate) = {corr}");
    }

    fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn profile_import_maps_skills_and_ignores_unknown_keys() {
        let s = sim();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"prompt_id": 42, "full_name": "A B", "gender": "female", "industry": "Legal", "skills": "Leadership, Sales", "max_tokens": 200}"#,
                "\n",
                r#"{"full_name": "C D", "skills": ["research"], "company_size": "201-500"}"#,
                "\n",
            ),
        )
        .unwrap();
        let personas = load_personas(&path, &s).unwrap();
        assert_eq!(personas.len(), 2);
        assert!(personas[0].true_skills.contains("leadership"));
        assert!(personas[0].has_target);
        assert!(personas[1].true_skills.contains("research"));
        assert!(!personas[1].has_target);
    }

    #[test]
    fn two_question_bank_is_learnable_by_brute_force_bayes() {
        use std::collections::HashMap;
        let bank =
            QuestionBank::new("leadership", &["sales".to_string(), "leadership".to_string()])
                .unwrap();
        let s = Simulator::new(bank.clone(), SimConfig::default());
        let q0 = bank.question(0).unwrap().clone();
        let q1 = bank.question(1).unwrap().clone();

        // Signature over everything the simulator emits for a full
        // two-question interview.
        let signature = |seed: u64| -> (Vec<String>, bool) {
            let p = s.sample_persona(seed);
            let mut x = Transcript::new();
            x.push(None, s.initial_summary(&p));
            let r0 = s.respond(&p, &q0, &x);
            x.push(Some(0), r0);
            let r1 = s.respond(&p, &q1, &x);
            x.push(Some(1), r1);
            let sig = x
                .exchanges
                .iter()
                .flat_map(|e| {
                    [
                        e.response.mentioned_skills.contains("leadership").to_string(),
                        e.response.text.contains("worked with leadership").to_string(),
                        e.response.text.contains("i am skilled in leadership").to_string(),
                    ]
                })
                .collect();
            (sig, p.has_target)
        };

        // Empirical posterior per signature on a training draw.
        let mut counts: HashMap<Vec<String>, (usize, usize)> = HashMap::new();
        for seed in 0..4000 {
            let (sig, y) = signature(seed);
            let slot = counts.entry(sig).or_insert((0, 0));
            slot.0 += usize::from(y);
            slot.1 += 1;
        }
        // Classify a held-out draw by majority posterior.
        let mut correct = 0;
        let n_test = 1000;
        for seed in 10_000..10_000 + n_test {
            let (sig, y) = signature(seed);
            let predicted = counts
                .get(&sig)
                .map(|(ones, total)| *ones * 2 > *total)
                .unwrap_or(false);
            correct += usize::from(predicted == y);
        }
        let accuracy = correct as f64 / n_test as f64;
        let base_rate = 0.8; // max(prevalence, 1 - prevalence)
        assert!(accuracy > base_rate, "Bayes accuracy {accuracy} not above {base_rate}");
    }

    #[test]
    fn empty_persona_file_is_malformed() {
        let s = sim();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            load_personas(&path, &s),
            Err(SimulatorError::MalformedPersonaFile(_))
        ));
    }
}
