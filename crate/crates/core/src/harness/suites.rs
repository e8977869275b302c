use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::metrics::{MetricsTable, Target};
use super::scenario::{synth_scenario, Scenario, ScenarioSpec};
use super::HarnessError;
use crate::backends::{mock_encode, HashingTextEncoder, MockWorld};
use crate::ids::UserId;
use crate::retrieval::{ItemKind, QueryGroups, Retriever};
use crate::runtime::AgentConfig;
use crate::store::{ExtractedMemory, MemoryStore, RelationTriplet};
use crate::stream::{
    build_stream, make_supervision_masks, vocab, DialogScript, MaskKind, StreamBuildConfig, DIALOG_START,
    MONOLOGUE_LEAD,
};

use crate::trigger::{
    extract_sessions, jaccard_score, labels_from_spans, span_match_at_n, tag_stream, RuleTagger, SessionSpan,
};
use crate::verification::{
    compute_eer, cosine_similarity, pass_at_k, rank_of, top_n_stats, CohortPair, CohortSet, Embedding, Modality,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Verification,
    Trigger,
    Retrieval,
    Streams,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Verification, Suite::Trigger, Suite::Retrieval, Suite::Streams];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Verification => "verification",
            Suite::Trigger => "trigger",
            Suite::Retrieval => "retrieval",
            Suite::Streams => "streams",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown suite {s:?}")))
    }
}

/// Runs one suite at its default size.
pub fn eval_suite(which: Suite, scenario: &Scenario, config: &AgentConfig) -> Result<MetricsTable, HarnessError> {
    match which {
        Suite::Verification => eval_verification(scenario, config, 5),
        Suite::Trigger => eval_trigger(scenario, 1000, scenario.spec.jitter),
        Suite::Retrieval => eval_retrieval(scenario, &config.retriever()),
        Suite::Streams => eval_streams(scenario.spec.seed, 100),
    }
}

fn need(ok: bool, what: impl Into<String>) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Infeasible(what.into()))
    }
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn combine(parts: &[(f64, &[f64])], modality: Modality) -> Embedding {
    let dim = parts[0].1.len();
    let v: Vec<f64> = (0..dim).map(|d| parts.iter().map(|(w, x)| w * x[d]).sum()).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let v: Vec<f64> = v.into_iter().map(|x| x / n).collect();
    Embedding::from_f64(&v, modality).expect("voice dim")
}

/// pass@1 on a population whose keys and queries share a nuisance direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedPopulation {
    pub raw_pass_at_1: f64,
    pub snorm_pass_at_1: f64,
    pub queries: usize,
}

/// A voice population where every embedding leans on one shared "hub"
/// direction by a random amount.
///
/// Keys that lean hard on the hub pull in other speakers' queries under
/// raw cosine; each query's score list is shifted by its own lean. The
/// cohorts come from the same population, so their top scores track each
/// side's lean and s-norm removes it.
pub fn shifted_population(seed: u64, speakers: usize, probes: usize) -> Result<ShiftedPopulation, HarnessError> {
    const COHORT: usize = 300;
    const TOP_N: usize = 100;
    need(speakers >= 2 && probes >= 1, "shifted population needs 2 speakers and 1 probe")?;
    let dim = Modality::Voice.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hub = unit(&mut rng, dim);
    let lean = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..2.0);

    let bases: Vec<Vec<f64>> = (0..speakers).map(|_| unit(&mut rng, dim)).collect();
    let keys: Vec<Embedding> = bases
        .iter()
        .map(|b| {
            let beta = lean(&mut rng);
            combine(&[(1.0, b), (beta, &hub)], Modality::Voice)
        })
        .collect();
    let cohort = |rng: &mut ChaCha8Rng| -> Result<CohortSet, HarnessError> {
        let members = (0..COHORT)
            .map(|_| {
                let g = unit(rng, dim);
                let gamma = lean(rng);
                combine(&[(1.0, &g), (gamma, &hub)], Modality::Voice)
            })
            .collect();
        Ok(CohortSet::new(members, TOP_N)?)
    };
    let cohorts = CohortPair { query: cohort(&mut rng)?, key: cohort(&mut rng)? };

    // Cohort statistics depend on one side only; compute them once.
    let key_stats = keys.iter().map(|k| top_n_stats(&cohorts.key.scores(k)?, TOP_N)).collect::<Result<Vec<_>, _>>()?;
    let (mut raw_ranks, mut snorm_ranks) = (Vec::new(), Vec::new());
    for (i, b) in bases.iter().enumerate() {
        for _ in 0..probes {
            let noise = unit(&mut rng, dim);
            let alpha = lean(&mut rng);
            let q = combine(&[(1.0, b), (0.8, &noise), (alpha, &hub)], Modality::Voice);
            let (mu_q, sd_q) = top_n_stats(&cohorts.query.scores(&q)?, TOP_N)?;
            let mut raw = Vec::with_capacity(keys.len());
            let mut norm = Vec::with_capacity(keys.len());
            for (k, &(mu_k, sd_k)) in keys.iter().zip(&key_stats) {
                let r = cosine_similarity(&q, k)?;
                raw.push(r);
                norm.push(0.5 * ((r - mu_q) / sd_q + (r - mu_k) / sd_k));
            }
            raw_ranks.push(rank_of(&raw, i));
            snorm_ranks.push(rank_of(&norm, i));
        }
    }
    Ok(ShiftedPopulation {
        raw_pass_at_1: pass_at_k(&raw_ranks, 1),
        snorm_pass_at_1: pass_at_k(&snorm_ranks, 1),
        queries: raw_ranks.len(),
    })
}

fn enrolled(world: &MockWorld, scenario: &Scenario, modality: Modality, sample: u64) -> Vec<Embedding> {
    scenario.people.iter().map(|p| mock_encode(&world.identity(p.identity, modality), sample, modality)).collect()
}

/// Closed-set identification and verification trials over the scenario's
/// people: sample 0 enrolls, samples `1..=probes` query.
pub fn eval_verification(scenario: &Scenario, config: &AgentConfig, probes: u64) -> Result<MetricsTable, HarnessError> {
    need(scenario.people.len() >= 2 && probes >= 1, "verification needs at least 2 people and 1 probe")?;
    let world = scenario.world();
    let cohorts = world.voice_cohorts(400, 200)?;
    let mut table = MetricsTable::new("verification");
    table.report("identities", scenario.people.len() as f64);

    for modality in [Modality::Face, Modality::Voice] {
        let tag = if modality == Modality::Face { "face" } else { "speaker" };
        let keys = enrolled(&world, scenario, modality, 0);
        let voice = modality == Modality::Voice;
        let key_stats = if voice {
            keys.iter()
                .map(|k| top_n_stats(&cohorts.key.scores(k)?, cohorts.key.top_n()))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        let (mut raw_ranks, mut norm_ranks) = (Vec::new(), Vec::new());
        let (mut raw_scores, mut norm_scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for sample in 1..=probes {
            for (i, q) in enrolled(&world, scenario, modality, sample).iter().enumerate() {
                let raw = keys.iter().map(|k| cosine_similarity(q, k)).collect::<Result<Vec<_>, _>>()?;
                let mut norm = Vec::new();
                if voice {
                    let (mu_q, sd_q) = top_n_stats(&cohorts.query.scores(q)?, cohorts.query.top_n())?;
                    norm = raw
                        .iter()
                        .zip(&key_stats)
                        .map(|(r, (mu_k, sd_k))| 0.5 * ((r - mu_q) / sd_q + (r - mu_k) / sd_k))
                        .collect();
                }
                raw_ranks.push(rank_of(&raw, i));
                labels.extend((0..keys.len()).map(|j| j == i));
                raw_scores.extend_from_slice(&raw);
                if !norm.is_empty() {
                    norm_ranks.push(rank_of(&norm, i));
                    norm_scores.extend_from_slice(&norm);
                }
            }
        }
        table.report(format!("{tag}_trials"), labels.len() as f64);
        table.report(format!("{tag}_pass@1_raw"), pass_at_k(&raw_ranks, 1));
        table.report(format!("{tag}_eer_raw"), compute_eer(&raw_scores, &labels)?.eer);
        if !norm_ranks.is_empty() {
            table.report(format!("{tag}_pass@1_snorm"), pass_at_k(&norm_ranks, 1));
            table.report(format!("{tag}_eer_snorm"), compute_eer(&norm_scores, &labels)?.eer);
        }
        if modality == Modality::Face {
            // the operating rule itself: distance below delta means match
            let delta = config.face_delta;
            let genuine_ok = raw_scores.iter().zip(&labels).filter(|(_, &l)| l).all(|(s, _)| 1.0 - s < delta);
            table.report("face_genuine_within_delta", f64::from(u8::from(genuine_ok)));
        }
    }

    let mut separable = scenario.clone();
    separable.spec.face_noise = 0.0;
    separable.spec.voice_noise = 0.0;
    let w0 = separable.world();
    let keys = enrolled(&w0, &separable, Modality::Voice, 0);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, q) in enrolled(&w0, &separable, Modality::Voice, 1).iter().enumerate() {
        for (j, k) in keys.iter().enumerate() {
            scores.push(cosine_similarity(q, k)?);
            labels.push(i == j);
        }
    }
    table.check("eer_separable", compute_eer(&scores, &labels)?.eer, Target::equal(0.0));

    let mut improved = 0;
    let (mut raw_sum, mut norm_sum) = (0.0, 0.0);
    const SEEDS: u64 = 20;
    for s in 0..SEEDS {
        let p = shifted_population(scenario.spec.seed.wrapping_mul(1000).wrapping_add(s), 40, 10)?;
        improved += usize::from(p.snorm_pass_at_1 >= p.raw_pass_at_1);
        raw_sum += p.raw_pass_at_1;
        norm_sum += p.snorm_pass_at_1;
    }
    table.report("shifted_pass@1_raw_mean", raw_sum / SEEDS as f64);
    table.report("shifted_pass@1_snorm_mean", norm_sum / SEEDS as f64);
    table.check("shifted_seeds_snorm_ge_raw", improved as f64, Target::equal(SEEDS as f64));
    Ok(table)
}

/// Shifts each boundary by `1..=jitter` steps in a random direction, keeping
/// spans ordered, disjoint and inside `0..len`.
fn jittered(spans: &[SessionSpan], jitter: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<SessionSpan> {
    let mut out: Vec<SessionSpan> = Vec::with_capacity(spans.len());
    for (i, s) in spans.iter().enumerate() {
        let lo = out.last().map_or(0, |p| p.end + 2);
        let hi = spans.get(i + 1).map_or(len - 1, |n| n.start.saturating_sub(2));
        let mut shift = |x: usize, lo: usize, hi: usize| -> usize {
            let d = rng.gen_range(1..=jitter);
            let up = (x + d <= hi).then_some(x + d);
            let down = x.checked_sub(d).filter(|&v| v >= lo);
            let pick = if rng.gen_bool(0.5) { up.or(down) } else { down.or(up) };
            pick.unwrap_or(x)
        };
        let start = shift(s.start, lo, hi);
        let end = shift(s.end, start, hi);
        out.push(SessionSpan::new(start, end));
    }
    out
}

#[derive(Default)]
struct SpanTally {
    jaccard: f64,
    matched: [usize; 3],
    pred: usize,
    gold: usize,
    streams: usize,
}

const TOLERANCES: [usize; 3] = [0, 5, 10];

impl SpanTally {
    fn add(&mut self, pred: &[SessionSpan], gold: &[SessionSpan]) {
        self.jaccard += jaccard_score(pred, gold);
        for (slot, n) in TOLERANCES.iter().enumerate() {
            self.matched[slot] += span_match_at_n(pred, gold, *n).matched;
        }
        self.pred += pred.len();
        self.gold += gold.len();
        self.streams += 1;
    }

    fn emit(&self, table: &mut MetricsTable, row: &str) -> [f64; 3] {
        table.report(format!("{row}_jaccard"), self.jaccard / self.streams as f64);
        let mut f1s = [0.0; 3];
        for (slot, n) in TOLERANCES.iter().enumerate() {
            let p = self.matched[slot] as f64 / self.pred.max(1) as f64;
            let r = self.matched[slot] as f64 / self.gold.max(1) as f64;
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            table.report(format!("{row}_p@{n}"), p);
            table.report(format!("{row}_r@{n}"), r);
            table.report(format!("{row}_f1@{n}"), f1);
            f1s[slot] = f1;
        }
        f1s
    }
}

/// Session boundary metrics, micro-averaged over `streams` synthetic
/// streams, for oracle tags, the rule tagger, and oracle spans with every
/// boundary moved by `1..=jitter` steps.
pub fn eval_trigger(scenario: &Scenario, streams: usize, jitter: usize) -> Result<MetricsTable, HarnessError> {
    let pool: Vec<&DialogScript> = scenario.all_dialogs().collect();
    need(!pool.is_empty() && streams > 0, "trigger suite needs dialogs and at least one stream")?;
    need(jitter > 0, "trigger suite needs a nonzero jitter")?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.spec.seed ^ 0x7472_6967);
    let config = StreamBuildConfig::default();
    let (mut oracle, mut rule, mut noisy) = (SpanTally::default(), SpanTally::default(), SpanTally::default());
    for i in 0..streams {
        let n = rng.gen_range(1..=6.min(pool.len()));
        let picked: Vec<DialogScript> = pool.choose_multiple(&mut rng, n).map(|d| (*d).clone()).collect();
        let built = build_stream(&picked, &config, scenario.spec.seed.wrapping_add(i as u64))?;
        let len = built.stream.len();
        let gold: Vec<SessionSpan> = built.gold_spans().iter().map(SessionSpan::from_range).collect();

        let (pred, _) = extract_sessions(&labels_from_spans(&built.gold_spans(), len));
        oracle.add(&pred, &gold);
        let tags =
            tag_stream(&built.stream, &RuleTagger::default()).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let (pred, _) = extract_sessions(&tags);
        rule.add(&pred, &gold);
        noisy.add(&jittered(&gold, jitter, len, &mut rng), &gold);
    }
    let mut table = MetricsTable::new("trigger");
    table.report("streams", streams as f64);
    table.report("sessions", oracle.gold as f64);
    let f = oracle.emit(&mut table, "oracle");
    table.check("oracle_jaccard_exact", oracle.jaccard / oracle.streams as f64, Target::equal(1.0));
    for (slot, n) in TOLERANCES.iter().enumerate() {
        table.check(format!("oracle_f1@{n}_exact"), f[slot], Target::equal(1.0));
    }
    let f = rule.emit(&mut table, "rule");
    table.check("rule_f1@5_min", f[1], Target::at_least(0.95));
    let f = noisy.emit(&mut table, "jitter");
    table.check("jitter_f1@0_max", f[0], Target::at_most(1.0 - 1e-9));
    if jitter <= 5 {
        table.check("jitter_f1@5_exact", f[1], Target::equal(1.0));
    }
    Ok(table)
}

/// Store seeded straight from the scenario's ground truth: every person
/// with all their facts, every relation as an edge.
pub fn seed_store(scenario: &Scenario, date: &str) -> Result<(MemoryStore, Vec<UserId>), HarnessError> {
    let world = scenario.world();
    let mut store = MemoryStore::new();
    let mut ids = Vec::new();
    for p in &scenario.people {
        let face = mock_encode(&world.identity(p.identity, Modality::Face), 0, Modality::Face);
        let voice = mock_encode(&world.identity(p.identity, Modality::Voice), 0, Modality::Voice);
        let memory = ExtractedMemory {
            user_name: p.name.clone(),
            user_facts: p.facts.iter().map(|f| f.text.clone()).collect(),
            summary_sentences: vec![format!("{} introduced themselves", p.name)],
            session_timestamp: date.to_owned(),
            ..Default::default()
        };
        ids.push(store.create_user(face, voice, &memory)?.user_id);
    }
    for r in &scenario.relations {
        store.add_relation_edge(RelationTriplet::new(ids[r.from].clone(), r.relation.clone(), ids[r.to].clone()))?;
    }
    Ok((store, ids))
}

/// pass@k over the scenario's query cases, counted on what actually fits in
/// the Level-2 budget.
pub fn eval_retrieval(scenario: &Scenario, retriever: &Retriever) -> Result<MetricsTable, HarnessError> {
    need(!scenario.queries.is_empty(), "retrieval suite needs query cases")?;
    let date = scenario.dates.first().map_or("2024-05-13", String::as_str);
    let (store, ids) = seed_store(scenario, date)?;
    let encoder = HashingTextEncoder::new(scenario.spec.seed);
    let (mut hits, mut within_budget, mut empty) = (0usize, 0usize, 0usize);
    for q in &scenario.queries {
        let result = retriever
            .retrieve(&q.groups, &store, &ids[q.asker], &encoder)
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        let relevant: BTreeSet<(&UserId, usize)> = q.relevant.iter().map(|&(p, f)| (&ids[p], f)).collect();
        let found = result.hits.iter().any(|h| {
            let s = &h.document.source;
            s.kind == ItemKind::Fact && s.user_id.as_ref().is_some_and(|u| relevant.contains(&(u, s.index)))
        });
        hits += usize::from(found);
        within_budget += usize::from(vocab::text_cost(&result.render()) <= retriever.budget);
        empty += usize::from(result.is_empty());
    }
    let n = scenario.queries.len() as f64;
    let tuples: usize = scenario.people.iter().map(|p| p.facts.len()).sum();
    let mut table = MetricsTable::new("retrieval");
    table.report("queries", n);
    table.report("tuples", tuples as f64);
    table.report("empty_results", empty as f64);
    table.check(format!("pass@{}", retriever.k), hits as f64 / n, Target::at_least(0.95));
    table.check("within_budget", within_budget as f64 / n, Target::equal(1.0));
    Ok(table)
}

fn query_for(word: &str) -> QueryGroups {
    QueryGroups::new(["friend"], [word]).expect("clean words")
}

/// Mask-count and layout checks on `scenarios` random streams in which
/// every turn carries a query.
pub fn eval_streams(seed: u64, scenarios: usize) -> Result<MetricsTable, HarnessError> {
    need(scenarios > 0, "streams suite needs at least one scenario")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7374_7265);
    let config = StreamBuildConfig::default();
    let (mut l1_bad, mut l2_bad, mut lead_bad, mut region_bad) = (0usize, 0usize, 0usize, 0usize);
    let (mut turns_checked, mut dialogs_checked) = (0usize, 0usize);
    for i in 0..scenarios {
        let spec = ScenarioSpec {
            users: rng.gen_range(4..=12),
            min_neighbors: 2,
            max_neighbors: 3,
            tuples: 8,
            queries: 2,
            seed: seed.wrapping_add(i as u64),
            ..ScenarioSpec::default()
        };
        let scenario = synth_scenario(&spec)?;
        let mut dialogs: Vec<DialogScript> = scenario.all_dialogs().cloned().collect();
        dialogs.shuffle(&mut rng);
        dialogs.truncate(rng.gen_range(1..=8));
        for d in &mut dialogs {
            for t in &mut d.turns {
                let word =
                    t.instruction.split_whitespace().next().unwrap_or("x").trim_matches(|c: char| !c.is_alphanumeric());
                t.query = Some(query_for(if word.is_empty() { "x" } else { word }));
            }
        }
        let built = build_stream(&dialogs, &config, rng.gen())?;
        let n = built.dialogs.len();
        let total_turns: usize = built.dialogs.iter().map(|d| d.turns.len()).sum();
        dialogs_checked += n;
        turns_checked += total_turns;

        let l1 = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::Level1)?;
        let spans_ok = l1.iter().zip(&built.dialogs).all(|(m, d)| m.supervised_steps().eq(d.span.clone()));
        l1_bad += usize::from(l1.len() != n || !spans_ok);
        let l2 = make_supervision_masks(&built.stream, &built.dialogs, MaskKind::Level2Query)?;
        let alternating =
            l2.chunks(2).all(|p| p[0].kind == MaskKind::Level2Query && p[1].kind == MaskKind::Level2Response);
        l2_bad += usize::from(l2.len() != 2 * total_turns || !alternating);

        let steps = built.stream.steps();
        region_bad += usize::from(built.dialogs.iter().any(|d| d.span.start < DIALOG_START));
        region_bad +=
            usize::from(steps[..DIALOG_START].iter().any(|s| s.is_audio_active() || s.text_token != vocab::PAD));
        for d in &built.dialogs {
            let script = &dialogs[d.script_index];
            for (t, layout) in d.turns.iter().enumerate() {
                let response = script.turns[t].response.as_bytes();
                let text_ok = layout
                    .response_text
                    .clone()
                    .zip(response)
                    .all(|(pos, &b)| vocab::text_byte(steps[pos].text_token) == Some(b));
                let lead_ok = layout.speak.start == layout.response_text.start + MONOLOGUE_LEAD
                    && steps[layout.speak.start].is_speak_active();
                lead_bad += usize::from(!(text_ok && lead_ok));
            }
        }
    }
    let mut table = MetricsTable::new("streams");
    table.report("scenarios", scenarios as f64);
    table.report("dialogs", dialogs_checked as f64);
    table.report("turns", turns_checked as f64);
    table.check("level1_count_violations", l1_bad as f64, Target::equal(0.0));
    table.check("level2_count_violations", l2_bad as f64, Target::equal(0.0));
    table.check("monologue_lead_violations", lead_bad as f64, Target::equal(0.0));
    table.check("region_violations", region_bad as f64, Target::equal(0.0));
    Ok(table)
}
