//! Synthetic news-video micro-corpus with a known generator.
//!
//! Every sample is one event: a person `P` doing an action `A` in a place
//! `G`, during an organisation's `L` event on topic `T`. Frame features are
//! the sum of fixed random directions for `P`, `G` and `A` plus noise, so the
//! visible entities are recoverable from video. `L` and `T` appear only in
//! the title and in the knowledge-base passage for `(P, G)`; the passage
//! refers to the person only by role. Captions read
//! `"{P} {A} in {G} during the {L} {T}."`.
//!
//! Names used both as a person and as a place (the collision fixtures) are
//! generated in both roles so that type-free retrieval is ambiguous.

use std::collections::{HashMap, HashSet};

use chrono::{Datelike, Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::builder::caption_context;
use crate::corpus::{CaptionOrigin, CaptionRecord, Corpus, FrameFeatures, VideoSample};
use crate::entities::EntitySet;
use crate::error::{Error, Result};
use crate::knowledge::KbEntry;
use crate::llm::{CassetteEntry, MockLlm};
use crate::metrics::Gazetteer;
use crate::prompts;

const FIRST: &[&str] = &[
    "Amara", "Boris", "Celia", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kemal", "Lena",
    "Mateo", "Nadia", "Oskar", "Priya", "Rafael", "Sofia", "Tariq", "Uma",
];
const LAST: &[&str] = &[
    "Okafor", "Lindqvist", "Moreau", "Petrov", "Santos", "Haddad", "Nakamura", "Brennan", "Kowalski", "Adeyemi",
    "Castillo", "Varga", "Osei", "Fischer", "Qureshi", "Duarte",
];
const GPES: &[&str] = &[
    "Kenya", "Peru", "Norway", "Vietnam", "Ghana", "Chile", "Austria", "Nepal", "Morocco", "Iceland", "Bolivia",
    "Latvia", "Senegal", "Uruguay",
];
/// Surfaces that exist both as a person and as a place.
const COLLISIONS: &[&str] = &["Jordan", "Chad", "Georgia"];
const ACTIONS: &[&str] = &[
    "arrives",
    "speaks to reporters",
    "meets officials",
    "tours a factory",
    "greets supporters",
    "visits a hospital",
];
const ORG_REGION: &[&str] = &["Northern", "Coastal", "Eastern", "Highland", "Delta", "Central"];
const ORG_SECTOR: &[&str] = &["Farmers", "Miners", "Traders", "Teachers", "Nurses", "Fishers"];
const ORG_BODY: &[&str] = &["Union", "Council"];
const TOPICS: &[&str] = &[
    "trade talks",
    "peace talks",
    "climate summit",
    "election debate",
    "health conference",
    "security forum",
];
const ASR: &[&str] = &[
    "thank you all for coming today",
    "we are very pleased to be here",
    "this is an important moment",
    "the meeting was productive",
    "we will continue to work together",
];
const GENERIC: &[&str] = &[
    "a crowd gathers as officials speak.",
    "people walk past a government building.",
    "cars move along a busy street.",
    "reporters wait outside a hall.",
    "a flag waves in the wind.",
];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthProfile {
    /// Captions determined by the video entities and the knowledge passage.
    Informative,
    /// Captions drawn from generic sentences independent of everything else.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub persons: usize,
    pub feature_dim: usize,
    pub frames: usize,
    /// Std of the per-frame noise relative to unit-norm entity directions.
    pub noise: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Events on or after this date draw their organisation from a pool
    /// disjoint from earlier events.
    pub novel_orgs_from: Option<NaiveDate>,
    /// Fraction of caption replies that open with a date clause.
    pub dated_reply_rate: f64,
    /// Fraction of rater replies that reject the caption.
    pub reject_rate: f64,
    pub asr_rate: f64,
    pub profile: SynthProfile,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 320,
            persons: 24,
            feature_dim: 32,
            frames: 6,
            noise: 0.3,
            start: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2019, 12, 31).unwrap(),
            novel_orgs_from: NaiveDate::from_ymd_opt(2017, 1, 1),
            dated_reply_rate: 0.25,
            reject_rate: 0.15,
            asr_rate: 0.5,
            profile: SynthProfile::Informative,
            seed: 7,
        }
    }
}

/// Generator-side truth for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub sample_id: String,
    pub person: String,
    pub gpe: String,
    pub action: String,
    pub org: String,
    pub topic: String,
    pub caption: String,
    pub passage: String,
    pub entities: EntitySet,
    pub caption_entities: EntitySet,
    pub rater_rejects: bool,
}

pub struct SynthWorld {
    pub config: SynthConfig,
    pub events: Vec<SynthEvent>,
    raw: Vec<VideoSample>,
    replies: Vec<(String, String)>,
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn org_name(i: usize) -> String {
    let r = i % ORG_REGION.len();
    let s = (i / ORG_REGION.len()) % ORG_SECTOR.len();
    let b = i / (ORG_REGION.len() * ORG_SECTOR.len());
    format!("{} {} {}", ORG_REGION[r], ORG_SECTOR[s], ORG_BODY[b])
}

fn org_count() -> usize {
    ORG_REGION.len() * ORG_SECTOR.len() * ORG_BODY.len()
}

/// Organisations split into two disjoint pools over the same words.
fn org_pool(novel: bool) -> Vec<String> {
    (0..org_count())
        .filter(|i| {
            let r = i % ORG_REGION.len();
            let s = (i / ORG_REGION.len()) % ORG_SECTOR.len();
            let b = i / (ORG_REGION.len() * ORG_SECTOR.len());
            ((r + s + b) % 2 == 1) == novel
        })
        .map(org_name)
        .collect()
}

impl SynthWorld {
    pub fn generate(config: SynthConfig) -> Result<Self> {
        if config.persons + COLLISIONS.len() > FIRST.len() * LAST.len() {
            return Err(Error::Argument("too many persons requested".into()));
        }
        if config.start > config.end || config.frames == 0 || config.feature_dim == 0 {
            return Err(Error::Argument("invalid synthetic corpus configuration".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut persons: Vec<String> = Vec::new();
        let mut order: Vec<(usize, usize)> =
            (0..FIRST.len()).flat_map(|f| (0..LAST.len()).map(move |l| (f, l))).collect();
        order.shuffle(&mut rng);
        let mut used_first = HashSet::new();
        for (f, l) in order {
            if persons.len() == config.persons {
                break;
            }
            // Distinct first names keep person names from sharing tokens too often.
            if used_first.insert(f) || used_first.len() == FIRST.len() {
                persons.push(format!("{} {}", FIRST[f], LAST[l]));
            }
        }
        persons.extend(COLLISIONS.iter().map(|s| s.to_string()));
        let gpes: Vec<String> = GPES.iter().chain(COLLISIONS).map(|s| s.to_string()).collect();

        let dim = config.feature_dim;
        let person_dir: Vec<Vec<f64>> = persons.iter().map(|_| unit_direction(&mut rng, dim)).collect();
        let gpe_dir: Vec<Vec<f64>> = gpes.iter().map(|_| unit_direction(&mut rng, dim)).collect();
        let action_dir: Vec<Vec<f64>> = ACTIONS.iter().map(|_| unit_direction(&mut rng, dim)).collect();

        // Unique (person, place) pairs; collision pairs come first in both roles.
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let base_p = config.persons;
        let base_g = GPES.len();
        for i in 0..COLLISIONS.len() {
            for j in 0..COLLISIONS.len() {
                if i != j {
                    pairs.push((base_p + i, base_g + j));
                }
            }
        }
        let mut rest: Vec<(usize, usize)> = (0..persons.len())
            .flat_map(|p| (0..gpes.len()).map(move |g| (p, g)))
            .filter(|pg| !pairs.contains(pg) && !(pg.0 >= base_p && persons[pg.0] == gpes[pg.1]))
            .collect();
        rest.shuffle(&mut rng);
        pairs.extend(rest);
        if config.samples > pairs.len() {
            return Err(Error::Argument(format!(
                "at most {} samples are possible with {} persons",
                pairs.len(),
                config.persons
            )));
        }
        pairs.truncate(config.samples);
        pairs.shuffle(&mut rng);

        let span = (config.end - config.start).num_days().max(0) as u64;
        let old_orgs = org_pool(false);
        let new_orgs = org_pool(true);
        let all_orgs: Vec<String> = (0..org_count()).map(org_name).collect();
        let noise = Normal::new(0.0, config.noise / (dim as f64).sqrt()).unwrap();

        let mut events = Vec::with_capacity(config.samples);
        let mut raw = Vec::with_capacity(config.samples);
        let mut replies = Vec::new();
        for (i, &(p, g)) in pairs.iter().enumerate() {
            let id = format!("syn{i:04}");
            let date = config.start + Days::new(rng.gen_range(0..=span));
            let a = rng.gen_range(0..ACTIONS.len());
            let pool = match config.novel_orgs_from {
                Some(cut) if date >= cut => &new_orgs,
                Some(_) => &old_orgs,
                None => &all_orgs,
            };
            let org = pool[rng.gen_range(0..pool.len())].clone();
            let topic = TOPICS[rng.gen_range(0..TOPICS.len())].to_string();
            let (person, gpe, action) = (persons[p].clone(), gpes[g].clone(), ACTIONS[a].to_string());

            let mut data = Vec::with_capacity(config.frames * dim);
            for _ in 0..config.frames {
                for k in 0..dim {
                    let v = person_dir[p][k] + gpe_dir[g][k] + action_dir[a][k] + noise.sample(&mut rng);
                    data.push(v as f32);
                }
            }
            let frame_features = FrameFeatures::new(config.frames, dim, data)?;

            let caption = match config.profile {
                SynthProfile::Informative => format!("{person} {action} in {gpe} during the {org} {topic}."),
                SynthProfile::Noise => {
                    let g = GENERIC[rng.gen_range(0..GENERIC.len())];
                    let mut c = g.to_string();
                    c[..1].make_ascii_uppercase();
                    c
                }
            };
            let passage = format!(
                "Officials in {gpe} prepared for the {org} {topic}, where a visiting guest was expected to {}.",
                match a {
                    0 => "arrive",
                    1 => "speak",
                    2 => "hold meetings",
                    3 => "see local industry",
                    4 => "meet the public",
                    _ => "see local services",
                }
            );
            let entities = EntitySet::new().with("PERSON", &[&person]).with("GPE", &[&gpe]);
            let caption_entities = match config.profile {
                SynthProfile::Informative => entities.clone().with("ORG", &[&org]),
                SynthProfile::Noise => EntitySet::new(),
            };

            let bullets = vec![
                format!("{person} {action} in {gpe}"),
                format!("Wide shot of crowds in {gpe}"),
                format!("Close up of {person}"),
            ];
            let dated = rng.gen_bool(config.dated_reply_rate);
            let day = date.day();
            let month = MONTHS[date.month0() as usize];
            let year = date.year();
            let bullets_in_article: Vec<String> = bullets
                .iter()
                .enumerate()
                .map(|(k, b)| if k == 0 && dated { format!("On {month} {day}, {year}, {b}") } else { b.clone() })
                .collect();
            let title = format!("{org} {topic} open in {gpe}");
            let article_text = format!(
                "{title}.\nThe {org} {topic} began this week.\n{}\nMore coverage follows.",
                bullets_in_article.iter().map(|b| format!("- {b}")).collect::<Vec<_>>().join("\n")
            );
            let asr_text = rng
                .gen_bool(config.asr_rate)
                .then(|| ASR[rng.gen_range(0..ASR.len())].to_string());
            let rater_rejects = rng.gen_bool(config.reject_rate);

            let context = caption_context(&title, &bullets_in_article);
            let reply = if dated { format!("On {month} {day}, {year}, {caption}") } else { caption.clone() };
            replies.push((prompts::caption_prompt(&context), reply));
            let mut ner = entities.to_string();
            ner.insert_str(ner.len() - 1, &format!(", DATE: [{year}]"));
            replies.push((prompts::entity_prompt(&bullets_in_article.join("\n")), ner));
            let verdict = if rater_rejects {
                "No. The summary leaves out critical information."
            } else {
                "Yes"
            };
            replies.push((prompts::rater_prompt(&context, &caption), verdict.to_string()));

            raw.push(VideoSample {
                id: id.clone(),
                source: ["AP", "Reuters", "BBC"][i % 3].to_string(),
                publish_date: date,
                title,
                article_text,
                bullet_summaries: Vec::new(),
                frame_features,
                asr_text,
                split: None,
                caption: None,
                entities: None,
            });
            events.push(SynthEvent {
                sample_id: id,
                person,
                gpe,
                action,
                org,
                topic,
                caption,
                passage,
                entities,
                caption_entities,
                rater_rejects,
            });
        }
        Ok(Self {
            config,
            events,
            raw,
            replies,
        })
    }

    /// Samples as ingested: article text only, no bullets, captions or
    /// entities.
    pub fn raw_corpus(&self) -> Result<Corpus> {
        Corpus::from_samples(self.raw.clone())
    }

    /// Samples with the generator's bullets, captions and entities filled
    /// in, as the builder produces them from [`Self::llm`].
    pub fn corpus(&self) -> Result<Corpus> {
        let samples = self
            .raw
            .iter()
            .zip(&self.events)
            .map(|(s, e)| {
                let mut s = s.clone();
                s.bullet_summaries = crate::builder::filter_bullet_summaries(&s.article_text);
                s.caption = Some(CaptionRecord::new(&s.id, e.caption.clone(), CaptionOrigin::EventDescriptions));
                s.entities = Some(e.entities.clone());
                s
            })
            .collect();
        Corpus::from_samples(samples)
    }

    /// Deterministic mock answering this corpus's caption, entity and rater
    /// prompts, falling back to the heuristic mock.
    pub fn llm(&self) -> MockLlm {
        self.replies
            .iter()
            .fold(MockLlm::heuristic().with_id("synthetic"), |m, (p, r)| m.with_fixture(p, r.clone()))
    }

    /// The fixture replies behind [`Self::llm`] as cassette entries.
    pub fn cassette(&self) -> Vec<CassetteEntry> {
        self.replies.iter().map(|(p, r)| CassetteEntry::new(p, r.clone())).collect()
    }

    /// Knowledge base: one passage per event keyed by its visible entities.
    pub fn kb(&self) -> Vec<KbEntry> {
        self.events
            .iter()
            .map(|e| KbEntry {
                entity_signature: e.entities.clone(),
                passage: e.passage.clone(),
            })
            .collect()
    }

    /// Every person, place and organisation the generator can emit.
    pub fn gazetteer(&self) -> Gazetteer {
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut seen = HashSet::new();
        for e in &self.events {
            for (t, s) in [("PERSON", &e.person), ("GPE", &e.gpe), ("ORG", &e.org)] {
                if seen.insert((t, s.clone())) {
                    pairs.push((t, s.clone()));
                }
            }
        }
        for i in 0..org_count() {
            let o = org_name(i);
            if seen.insert(("ORG", o.clone())) {
                pairs.push(("ORG", o));
            }
        }
        Gazetteer::new(pairs.iter().map(|(t, s)| (*t, s.as_str())))
    }

    pub fn event(&self, id: &str) -> Option<&SynthEvent> {
        self.events.iter().find(|e| e.sample_id == id)
    }

    pub fn events_by_id(&self) -> HashMap<&str, &SynthEvent> {
        self.events.iter().map(|e| (e.sample_id.as_str(), e)).collect()
    }

    /// Ids of samples involved in a person/place name collision.
    pub fn collision_ids(&self) -> Vec<String> {
        self.events
            .iter()
            .filter(|e| COLLISIONS.contains(&e.person.as_str()) && COLLISIONS.contains(&e.gpe.as_str()))
            .map(|e| e.sample_id.clone())
            .collect()
    }
}
