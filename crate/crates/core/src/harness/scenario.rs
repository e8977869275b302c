use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backends::{IdentitySeed, MockWorld};
use crate::ids::IdentityId;
use crate::retrieval::QueryGroups;
use crate::store::{ExtractedMemory, RelationFact};
use crate::stream::{build_stream, DialogScript, FaceMark, StreamBuildConfig, TokenStep, TokenStream, Turn};

const NAMES: &[&str] = &[
    "Ava", "Ben", "Cleo", "Dev", "Ella", "Finn", "Gia", "Hugo", "Iris", "Jack", "Kai", "Lena", "Milo", "Nora", "Omar",
    "Pia", "Quinn", "Rosa", "Sam", "Tara", "Umar", "Vera", "Wes", "Xena", "Yuri", "Zoe", "Aria", "Bo", "Cora", "Dan",
    "Eve", "Felix", "Gwen", "Hana", "Ivan", "Jade", "Kofi", "Luz", "Max", "Nia", "Otto", "Petra", "Raj", "Sia", "Theo",
    "Uma", "Vik", "Wren", "Yara", "Zeke",
];

const RELATIONS: &[&str] =
    &["colleague", "friend", "sister", "brother", "neighbor", "classmate", "cousin", "teammate", "roommate", "mentor"];

const TOPICS: &[&str] = &[
    "tennis",
    "chess",
    "jazz",
    "sushi",
    "hiking",
    "painting",
    "cycling",
    "gardening",
    "photography",
    "swimming",
    "baking",
    "yoga",
    "poetry",
    "football",
    "skiing",
    "guitar",
    "knitting",
    "surfing",
    "opera",
    "climbing",
    "pottery",
    "fishing",
    "running",
    "dancing",
    "volleyball",
    "karaoke",
    "origami",
    "astronomy",
    "camping",
    "sailing",
    "boxing",
    "golf",
    "baseball",
    "basketball",
    "cricket",
    "rowing",
    "archery",
    "fencing",
    "birdwatching",
    "calligraphy",
];

const FACT_TEMPLATES: &[&str] = &[
    "{name} loves {topic}",
    "{name} started {topic} last year",
    "{name} talked about {topic} with friends",
    "{name} wants to try {topic} soon",
    "{name} spends weekends on {topic}",
];

/// Sizes and noise for a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub users: usize,
    pub min_neighbors: usize,
    pub max_neighbors: usize,
    /// Facts across all neighbor profiles: the retrieval candidate pool.
    pub tuples: usize,
    pub queries: usize,
    pub face_noise: f64,
    pub voice_noise: f64,
    /// Boundary jitter, in steps, for the noisy trigger rows.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            users: 40,
            min_neighbors: 3,
            max_neighbors: 5,
            tuples: 500,
            queries: 200,
            face_noise: 0.05,
            voice_noise: 0.05,
            jitter: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSpec {
    pub topic: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub identity: IdentityId,
    pub name: String,
    /// Whether this person anchors a relation graph.
    pub main: bool,
    pub facts: Vec<FactSpec>,
    pub persona: BTreeMap<String, String>,
}

/// `to` is `from`'s `relation`; indices into [`Scenario::people`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub from: usize,
    pub relation: String,
    pub to: usize,
}

/// A Level-2 question with the documents that answer it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCase {
    pub asker: usize,
    pub groups: QueryGroups,
    /// `(person, fact index)` pairs that satisfy the question.
    pub relevant: Vec<(usize, usize)>,
}

/// Everything needed to build streams, drive mocks and score results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub people: Vec<Person>,
    pub identities: Vec<IdentitySeed>,
    pub relations: Vec<RelationSpec>,
    pub queries: Vec<QueryCase>,
    /// One per person; introductions, neighbors before their main user.
    pub intro_dialogs: Vec<DialogScript>,
    /// One per query case chosen for the simulated second day.
    pub question_dialogs: Vec<DialogScript>,
    /// Short check-in per person for the third day.
    pub greeting_dialogs: Vec<DialogScript>,
    pub transcripts: BTreeMap<u32, String>,
    pub annotations: BTreeMap<String, ExtractedMemory>,
    /// Session date of each simulated day.
    pub dates: Vec<String>,
}

pub const INTRO_BASE: u32 = 0;
pub const QUESTION_BASE: u32 = 10_000;
pub const GREETING_BASE: u32 = 20_000;

fn default_dates() -> Vec<String> {
    ["2024-05-13", "2024-05-14", "2024-05-15"].map(String::from).to_vec()
}

impl Scenario {
    pub fn world(&self) -> MockWorld {
        MockWorld {
            seed: self.spec.seed,
            face_noise: self.spec.face_noise,
            voice_noise: self.spec.voice_noise,
            transcripts: self.transcripts.clone(),
            annotations: self.annotations.clone(),
            // Derived on demand from the seed, each modality with its own noise.
            identities: BTreeMap::new(),
        }
    }

    pub fn person_by_identity(&self, id: IdentityId) -> Option<usize> {
        self.people.iter().position(|p| p.identity == id)
    }

    pub fn neighbors_of(&self, person: usize) -> impl Iterator<Item = &RelationSpec> {
        self.relations.iter().filter(move |r| r.from == person)
    }

    pub fn all_dialogs(&self) -> impl Iterator<Item = &DialogScript> {
        self.intro_dialogs.iter().chain(&self.question_dialogs).chain(&self.greeting_dialogs)
    }

    /// Every turn speaker is a declared identity, every utterance has a
    /// transcript, and no two dialogs share one.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let declared: BTreeSet<IdentityId> = self.identities.iter().map(|s| s.identity_id).collect();
        let mut ids = BTreeSet::new();
        let mut said = BTreeSet::new();
        for d in self.all_dialogs() {
            if !ids.insert(d.dialog_id) {
                return Err(HarnessError::Invalid(format!("dialog id {} used twice", d.dialog_id)));
            }
            // annotations are keyed by transcript
            if !said.insert(transcript_of(d)) {
                return Err(HarnessError::Invalid(format!(
                    "dialog {} repeats another dialog's transcript",
                    d.dialog_id
                )));
            }
            for (i, t) in d.turns.iter().enumerate() {
                if !declared.contains(&t.speaker) {
                    return Err(HarnessError::Invalid(format!(
                        "dialog {} speaker {} is not declared",
                        d.dialog_id, t.speaker.0
                    )));
                }
                if !self.transcripts.contains_key(&d.utterance_key(i)) {
                    return Err(HarnessError::Invalid(format!("dialog {} turn {i} has no transcript", d.dialog_id)));
                }
            }
        }
        for r in &self.relations {
            if r.from >= self.people.len() || r.to >= self.people.len() || r.from == r.to {
                return Err(HarnessError::Invalid(format!("bad relation {r:?}")));
            }
        }
        Ok(())
    }

    /// Registers `script` with transcripts and, when given, its annotation.
    pub fn add_dialog(&mut self, script: DialogScript, annotation: Option<ExtractedMemory>) -> DialogScript {
        for (i, t) in script.turns.iter().enumerate() {
            self.transcripts.insert(script.utterance_key(i), t.instruction.clone());
        }
        if let Some(a) = annotation {
            self.annotations.insert(transcript_of(&script), a);
        }
        script
    }
}

/// What the mock ASR returns for a whole dialog.
pub fn transcript_of(script: &DialogScript) -> String {
    script.turns.iter().map(|t| t.instruction.as_str()).collect::<Vec<_>>().join("\n")
}

fn unique_name(i: usize) -> String {
    let base = NAMES[i % NAMES.len()];
    match i / NAMES.len() {
        0 => base.to_owned(),
        k => format!("{base}{}", k + 1),
    }
}

fn fact_text(rng: &mut ChaCha8Rng, name: &str, topic: &str) -> String {
    FACT_TEMPLATES.choose(rng).expect("templates").replace("{name}", name).replace("{topic}", topic)
}

/// First-person version of a third-person fact for the instruction channel.
fn first_person(name: &str, fact: &str) -> String {
    let rest = fact.strip_prefix(name).unwrap_or(fact).trim_start();
    let rest = rest.replacen("loves", "love", 1).replacen("wants", "want", 1).replacen("spends", "spend", 1);
    format!("I {rest}.")
}

fn empty_memory(name: &str) -> ExtractedMemory {
    ExtractedMemory { user_name: name.to_owned(), ..Default::default() }
}

/// Deterministic synthetic population, graph, dialogs and annotations.
///
/// People are grouped as one main user plus `min_neighbors..=max_neighbors`
/// neighbors; facts are spread over neighbors round-robin with distinct
/// topics per person. Each query asks a main user's question about one
/// neighbor fact; every neighbor with the same relation and topic counts as
/// relevant.
pub fn synth_scenario(spec: &ScenarioSpec) -> Result<Scenario, HarnessError> {
    if spec.users < 2 || spec.min_neighbors == 0 || spec.min_neighbors > spec.max_neighbors {
        return Err(HarnessError::Infeasible(format!(
            "need at least 2 users and 1 <= min_neighbors <= max_neighbors, got {spec:?}"
        )));
    }
    if spec.max_neighbors > spec.users - 1 || spec.min_neighbors + 1 > spec.users {
        return Err(HarnessError::Infeasible(format!(
            "{} neighbors requested but only {} other users",
            spec.max_neighbors,
            spec.users - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut people: Vec<Person> = (0..spec.users)
        .map(|i| Person {
            identity: IdentityId(i as u32 + 1),
            name: unique_name(i),
            main: false,
            facts: Vec::new(),
            persona: BTreeMap::new(),
        })
        .collect();

    // Disjoint groups; a tail too small for a group joins the last one.
    let mut relations = Vec::new();
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut next = 0;
    while next < spec.users {
        let left = spec.users - next;
        if left < spec.min_neighbors + 1 {
            if let Some((_, members)) = groups.last_mut() {
                members.extend(next..spec.users);
                break;
            }
        }
        let k = rng.gen_range(spec.min_neighbors..=spec.max_neighbors).min(left - 1);
        groups.push((next, (next + 1..next + 1 + k).collect()));
        next += k + 1;
    }
    for (main, members) in &groups {
        people[*main].main = true;
        for &m in members {
            let relation = RELATIONS.choose(&mut rng).expect("relations").to_string();
            relations.push(RelationSpec { from: *main, relation, to: m });
        }
    }

    let neighbors: Vec<usize> = (0..spec.users).filter(|&i| !people[i].main).collect();
    if spec.tuples > neighbors.len() * TOPICS.len() {
        return Err(HarnessError::Infeasible(format!(
            "{} tuples over {} neighbors exceeds {} topics each",
            spec.tuples,
            neighbors.len(),
            TOPICS.len()
        )));
    }
    let mut topic_orders: Vec<Vec<&str>> = neighbors
        .iter()
        .map(|_| {
            let mut t = TOPICS.to_vec();
            t.shuffle(&mut rng);
            t
        })
        .collect();
    for n in 0..spec.tuples {
        let slot = n % neighbors.len();
        let person = neighbors[slot];
        let topic = topic_orders[slot].remove(0);
        let text = fact_text(&mut rng, &people[person].name, topic);
        people[person].facts.push(FactSpec { topic: topic.to_owned(), text });
    }
    for p in &mut people {
        let sport = ["tennis", "football", "golf", "swimming"].choose(&mut rng).expect("sports");
        p.persona.insert("favorite_sport".into(), sport.to_string());
        let city = ["Lyon", "Osaka", "Austin", "Porto", "Accra"].choose(&mut rng).expect("cities");
        p.persona.insert("current_city".into(), city.to_string());
    }

    let mut queries = Vec::new();
    let askable: Vec<&RelationSpec> = relations.iter().filter(|r| !people[r.to].facts.is_empty()).collect();
    if spec.queries > 0 && askable.is_empty() {
        return Err(HarnessError::Infeasible("queries requested but no neighbor has facts".into()));
    }
    for _ in 0..spec.queries {
        let rel = *askable.choose(&mut rng).expect("askable");
        let fact = rng.gen_range(0..people[rel.to].facts.len());
        let topic = people[rel.to].facts[fact].topic.clone();
        let relevant = relations
            .iter()
            .filter(|r| r.from == rel.from && r.relation == rel.relation)
            .flat_map(|r| {
                people[r.to].facts.iter().enumerate().filter(|(_, f)| f.topic == topic).map(move |(i, _)| (r.to, i))
            })
            .collect();
        let groups = QueryGroups::new([rel.relation.clone()], [topic]).expect("query words are clean");
        queries.push(QueryCase { asker: rel.from, groups, relevant });
    }

    let identities = people.iter().map(|p| IdentitySeed::derive(spec.seed, p.identity, spec.face_noise)).collect();
    let mut scenario = Scenario {
        spec: spec.clone(),
        people,
        identities,
        relations,
        queries,
        intro_dialogs: Vec::new(),
        question_dialogs: Vec::new(),
        greeting_dialogs: Vec::new(),
        transcripts: BTreeMap::new(),
        annotations: BTreeMap::new(),
        dates: default_dates(),
    };
    synth_dialogs(&mut scenario, &mut rng);
    scenario.validate()?;
    Ok(scenario)
}

fn synth_dialogs(s: &mut Scenario, rng: &mut ChaCha8Rng) {
    // Neighbors introduce themselves first so main users can name them.
    let mut order: Vec<usize> = (0..s.people.len()).filter(|&i| !s.people[i].main).collect();
    order.extend((0..s.people.len()).filter(|&i| s.people[i].main));
    for (k, &i) in order.iter().enumerate() {
        let p = s.people[i].clone();
        let mut turns = vec![Turn::new(
            p.identity,
            format!("Hi, my name is {}.", p.name),
            format!("Nice to meet you, {}.", p.name),
        )];
        let mut memory = empty_memory(&p.name);
        memory.summary_sentences.push(format!("{} introduced themselves", p.name));
        for f in p.facts.iter().take(2) {
            turns.push(Turn::new(p.identity, first_person(&p.name, &f.text), "That sounds fun."));
            memory.user_facts.push(f.text.clone());
        }
        let rels: Vec<&RelationSpec> = s.neighbors_of(i).collect();
        for chunk in rels.chunks(2) {
            let said: Vec<String> =
                chunk.iter().map(|r| format!("{} is my {}", s.people[r.to].name, r.relation)).collect();
            turns.push(Turn::new(p.identity, format!("{}.", said.join(" and ")), "Good to know."));
            for r in chunk {
                memory
                    .relation_facts
                    .push(RelationFact { relation: r.relation.clone(), other_user_name: s.people[r.to].name.clone() });
            }
        }
        while turns.len() < 3 {
            turns.push(Turn::new(p.identity, "It is a nice day.", "It really is."));
        }
        let sport = &p.persona["favorite_sport"];
        turns.push(Turn::new(p.identity, format!("My favorite sport is {sport}."), "Great choice."));
        memory.persona_trail =
            p.persona.iter().filter(|(k, _)| *k == "favorite_sport").map(|(k, v)| (k.clone(), v.clone())).collect();
        turns.truncate(5.max(turns.len()));
        let script = DialogScript::new(INTRO_BASE + k as u32, turns);
        let script = s.add_dialog(script, Some(memory));
        s.intro_dialogs.push(script);
    }

    // At most one question per main user on the second day.
    let mut asked = BTreeSet::new();
    let cases: Vec<QueryCase> = s.queries.iter().filter(|q| asked.insert(q.asker)).cloned().collect();
    for (k, q) in cases.iter().enumerate() {
        let p = s.people[q.asker].clone();
        let (relation, topic) = (&q.groups.relations[0], &q.groups.keywords[0]);
        let turns = vec![
            Turn::new(p.identity, format!("Hi, it is {} again.", p.name), format!("Welcome back, {}.", p.name)),
            Turn::new(p.identity, format!("Do any of my {relation}s like {topic}?"), "Let me check my memory.")
                .with_query(q.groups.clone()),
            Turn::new(p.identity, "Thanks, that is good to know.", "Anytime."),
        ];
        let mut memory = empty_memory(&p.name);
        memory.user_facts.push(format!("{} shows interest in {topic}", p.name));
        memory.summary_sentences.push(format!("user asked if any of their {relation}s likes {topic}"));
        let script = s.add_dialog(DialogScript::new(QUESTION_BASE + k as u32, turns), Some(memory));
        s.question_dialogs.push(script);
    }

    for (k, p) in s.people.clone().iter().enumerate() {
        let hello = ["Good morning", "Hello again", "Hey there"].choose(rng).expect("greetings");
        let turns = vec![
            Turn::new(p.identity, format!("{hello}, it is {}.", p.name), "Good to see you."),
            Turn::new(p.identity, "How are you today?", "I am doing well, thanks."),
            Turn::new(p.identity, "See you later.", "Goodbye."),
        ];
        let mut memory = empty_memory(&p.name);
        memory.summary_sentences.push("user stopped by to say hello".into());
        let script = s.add_dialog(DialogScript::new(GREETING_BASE + k as u32, turns), Some(memory));
        s.greeting_dialogs.push(script);
    }
}

/// The colleague-and-tennis walkthrough: John, Ann and Bob introduce
/// themselves, Emily names them as colleagues and sister, asks the next day
/// whether a colleague loves tennis, and comes back on a third day.
pub fn walkthrough_scenario(seed: u64) -> Scenario {
    let names = ["Emily", "John", "Ann", "Bob"];
    let people: Vec<Person> = names
        .iter()
        .enumerate()
        .map(|(i, n)| Person {
            identity: IdentityId(i as u32 + 1),
            name: n.to_string(),
            main: i == 0,
            facts: Vec::new(),
            persona: BTreeMap::new(),
        })
        .collect();
    let spec = ScenarioSpec {
        users: 4,
        min_neighbors: 3,
        max_neighbors: 3,
        tuples: 0,
        queries: 1,
        seed,
        ..ScenarioSpec::default()
    };
    let identities = people.iter().map(|p| IdentitySeed::derive(seed, p.identity, spec.face_noise)).collect();
    let rel = |relation: &str, to| RelationSpec { from: 0, relation: relation.into(), to };
    let mut s = Scenario {
        spec,
        people,
        identities,
        relations: vec![rel("colleague", 1), rel("sister", 2), rel("colleague", 3)],
        queries: Vec::new(),
        intro_dialogs: Vec::new(),
        question_dialogs: Vec::new(),
        greeting_dialogs: Vec::new(),
        transcripts: BTreeMap::new(),
        annotations: BTreeMap::new(),
        dates: default_dates(),
    };
    let id = |i: usize| s.people[i].identity;
    let (emily, john, ann, bob) = (id(0), id(1), id(2), id(3));

    let intro =
        |s: &mut Scenario, dialog: u32, who: IdentityId, name: &str, lines: &[&str], memory: ExtractedMemory| {
            let mut turns =
                vec![Turn::new(who, format!("Hi, my name is {name}."), format!("Nice to meet you, {name}."))];
            turns.extend(lines.iter().map(|l| Turn::new(who, *l, "I will remember that.")));
            let script = s.add_dialog(DialogScript::new(dialog, turns), Some(memory));
            s.intro_dialogs.push(script);
        };
    let memory = |name: &str, facts: &[&str], summary: &str| ExtractedMemory {
        user_name: name.into(),
        user_facts: facts.iter().map(|f| f.to_string()).collect(),
        summary_sentences: vec![summary.into()],
        ..Default::default()
    };
    let mut john_memory = memory(
        "John",
        &["user discussed a tennis game he played 2 days ago"],
        "user introduced himself and talked about tennis",
    );
    john_memory.persona_trail.insert("favorite_sport".into(), "tennis".into());
    intro(&mut s, 0, john, "John", &["I played a tennis game 2 days ago.", "It was a close match."], john_memory);
    intro(
        &mut s,
        1,
        ann,
        "Ann",
        &["I play tennis every Sunday.", "My brother taught me."],
        memory("Ann", &["Ann plays tennis every Sunday"], "user introduced herself"),
    );
    intro(
        &mut s,
        2,
        bob,
        "Bob",
        &["I enjoy chess in the evenings.", "I also collect stamps."],
        memory("Bob", &["Bob enjoys chess", "Bob collects stamps"], "user introduced himself"),
    );
    let mut emily_memory = memory("Emily", &["Emily works in marketing"], "user introduced herself and her friends");
    emily_memory.relation_facts = vec![
        RelationFact { relation: "colleague".into(), other_user_name: "John".into() },
        RelationFact { relation: "sister".into(), other_user_name: "Ann".into() },
        RelationFact { relation: "colleague".into(), other_user_name: "Bob".into() },
    ];
    intro(
        &mut s,
        3,
        emily,
        "Emily",
        &["I work in marketing.", "John and Bob are my colleagues and Ann is my sister."],
        emily_memory,
    );

    let groups = QueryGroups::new(["colleague"], ["tennis"]).expect("clean words");
    s.queries.push(QueryCase { asker: 0, groups: groups.clone(), relevant: Vec::new() });
    let turns = vec![
        Turn::new(emily, "Hi, it is Emily.", "Hi Emily, good to see you."),
        Turn::new(emily, "Does any of my colleagues love tennis?", "Yes, Emily, your colleague John loves tennis.")
            .with_query(groups),
        Turn::new(emily, "Great, I will ask him to play.", "Have fun!"),
    ];
    let day2 =
        memory("Emily", &["Emily shows interest in tennis"], "user asked if any of her colleagues loves tennis.");
    let script = s.add_dialog(DialogScript::new(QUESTION_BASE, turns), Some(day2));
    s.question_dialogs.push(script);

    let turns = vec![
        Turn::new(emily, "Good morning!", "Hi Emily, did you talk to John about tennis?"),
        Turn::new(emily, "Yes, we play on Friday.", "Wonderful."),
        Turn::new(emily, "See you later.", "Goodbye."),
    ];
    let script = s.add_dialog(
        DialogScript::new(GREETING_BASE, turns),
        Some(memory("Emily", &["Emily plays tennis with John on Friday"], "user said she will play tennis with John")),
    );
    s.greeting_dialogs.push(script);
    s
}

/// A dialog placed on the simulated timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedDialog {
    pub dialog_id: u32,
    pub speaker: IdentityId,
    /// Absolute steps.
    pub span: Range<u64>,
}

/// A day of stream as contiguous live chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySource {
    pub chunks: Vec<TokenStream>,
    pub dialogs: Vec<PlacedDialog>,
}

impl DaySource {
    pub fn len(&self) -> usize {
        self.chunks.iter().map(TokenStream::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn faces(&self) -> impl Iterator<Item = &FaceMark> {
        self.chunks.iter().flat_map(|c| c.faces())
    }
}

/// Lays `dialogs` out as live chunks starting at `base_step`.
///
/// Each chunk holds as many dialogs as fit in one stream, followed by
/// `config.dialog_gap` silent steps so a dialog never touches the next
/// chunk's first dialog.
pub fn build_day(
    dialogs: &[DialogScript],
    config: &StreamBuildConfig,
    seed: u64,
    base_step: u64,
) -> Result<DaySource, HarnessError> {
    let mut out = DaySource { chunks: Vec::new(), dialogs: Vec::new() };
    let mut rest = dialogs;
    let mut cursor = base_step;
    let mut round = 0u64;
    while !rest.is_empty() {
        let built = build_stream(rest, config, seed.wrapping_add(round))?;
        if built.dialogs.is_empty() {
            return Err(HarnessError::Invalid(format!("dialog {} does not fit in one stream", rest[0].dialog_id)));
        }
        let region = built.stream.dialog_region();
        let start = region.start as u64;
        let remap = |x: u64| x - start + cursor;
        let mut steps: Vec<TokenStep> = built.stream.steps()[region.clone()]
            .iter()
            .map(|s| TokenStep { step_index: remap(s.step_index), ..*s })
            .collect();
        let end = cursor + steps.len() as u64;
        steps.extend((end..end + config.dialog_gap as u64).map(TokenStep::silent));
        let faces = built.stream.faces().iter().map(|f| FaceMark { step: remap(f.step), ..*f }).collect();
        for d in &built.dialogs {
            out.dialogs.push(PlacedDialog {
                dialog_id: d.dialog_id,
                speaker: d.speaker,
                span: remap(d.span.start as u64)..remap(d.span.end as u64),
            });
        }
        let chunk = TokenStream::chunk(cursor, steps, faces)?;
        cursor += chunk.len() as u64;
        out.chunks.push(chunk);
        rest = &rest[built.dialogs.len()..];
        round += 1;
    }
    Ok(out)
}
