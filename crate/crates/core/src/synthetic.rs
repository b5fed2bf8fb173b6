//! Generators for small labelled review corpora used by tests, examples and
//! the bundled toy data.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aspect::{AspectConfig, AspectSpec};
use crate::corpus::{EntityRecord, ReviewCorpus, ReviewRecord, SentenceRecord};
use crate::quantizer::AssignmentTable;
use crate::sampling::{derive_rng, SeededRng};

/// Corpus plus a label for every sentence, in `EntityRecord::sentences`
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    pub corpus: ReviewCorpus,
    pub labels: Vec<Vec<usize>>,
    pub label_names: Vec<String>,
}

impl LabeledCorpus {
    pub fn entity_labels(&self, entity_id: &str) -> Option<&[usize]> {
        let i = self.corpus.entities.iter().position(|e| e.entity_id == entity_id)?;
        Some(&self.labels[i])
    }

    /// Label of a sentence, looked up by its text within the entity.
    pub fn label_of(&self, entity_id: &str, text: &str) -> Option<usize> {
        let i = self.corpus.entities.iter().position(|e| e.entity_id == entity_id)?;
        self.corpus.entities[i]
            .sentences()
            .position(|(_, s)| s.text == text)
            .map(|j| self.labels[i][j])
    }
}

fn pick<'a>(rng: &mut SeededRng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn fill(template: &str, rng: &mut SeededRng, slots: &[(&str, &[&str])]) -> String {
    let mut out = template.to_string();
    for (name, options) in slots {
        let key = format!("{{{name}}}");
        while let Some(pos) = out.find(&key) {
            out.replace_range(pos..pos + key.len(), pick(rng, options));
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Packs sentences into entities of `per_review`-sentence reviews.
fn pack(domain: &str, entities: Vec<(String, Vec<String>)>, per_review: usize) -> ReviewCorpus {
    ReviewCorpus {
        domain_name: domain.into(),
        entities: entities
            .into_iter()
            .map(|(id, sents)| EntityRecord {
                reviews: sents
                    .chunks(per_review)
                    .enumerate()
                    .map(|(r, chunk)| ReviewRecord {
                        review_id: format!("{id}-r{r:02}"),
                        sentences: chunk
                            .iter()
                            .enumerate()
                            .map(|(i, t)| SentenceRecord {
                                sentence_index: i,
                                text: t.clone(),
                                token_ids: Vec::new(),
                            })
                            .collect(),
                    })
                    .collect(),
                entity_id: id,
            })
            .collect(),
    }
}

const ROOM_NOUNS: &[&str] = &["room", "bed", "bathroom", "shower", "balcony", "view"];
const GOOD: &[&str] = &["clean", "comfortable", "spacious", "lovely", "quiet", "modern"];
const BAD: &[&str] = &["dirty", "small", "noisy", "old", "dark", "cramped"];
const STAFF: &[&str] = &["friendly", "helpful", "polite", "rude", "slow", "attentive"];
const FOOD: &[&str] = &["breakfast", "dinner", "coffee", "buffet", "restaurant"];
const TASTE: &[&str] = &["delicious", "tasty", "bland", "expensive", "fresh"];
const PLACES: &[&str] = &["beach", "station", "airport", "old town", "park"];
const VERDICT: &[&str] = &["recommend", "revisit", "avoid", "book"];

/// 500 templated hotel-review sentences: 10 entities with 10 reviews of 5
/// sentences each.
pub fn templated_corpus(seed: u64) -> ReviewCorpus {
    let mut rng = derive_rng(seed, "templated");
    let templates = [
        "the {noun} was {good}",
        "the {noun} was {bad} but the staff were {staff}",
        "{food} was {taste}",
        "great location near the {place}",
        "we would {verdict} this hotel",
    ];
    let entities = (0..10)
        .map(|e| {
            let sents = (0..50)
                .map(|i| {
                    fill(
                        templates[i % 5],
                        &mut rng,
                        &[
                            ("noun", ROOM_NOUNS),
                            ("good", GOOD),
                            ("bad", BAD),
                            ("staff", STAFF),
                            ("food", FOOD),
                            ("taste", TASTE),
                            ("place", PLACES),
                            ("verdict", VERDICT),
                        ],
                    )
                })
                .collect();
            (format!("hotel-{e:02}"), sents)
        })
        .collect();
    pack("toy-hotels", entities, 5)
}

/// Paraphrase families, one per opinion.
const OPINIONS: &[(&str, &[&str])] = &[
    (
        "breakfast",
        &[
            "the breakfast buffet was {very} delicious",
            "{very} delicious breakfast buffet",
            "we enjoyed a {very} delicious breakfast buffet",
            "the buffet breakfast was {very} delicious",
        ],
    ),
    (
        "pool",
        &[
            "the pool was {very} clean and warm",
            "{very} warm and clean pool",
            "the pool area was {very} clean",
            "we loved the {very} warm pool",
        ],
    ),
    (
        "staff",
        &[
            "the staff were {very} friendly and helpful",
            "{very} helpful and friendly staff",
            "the staff was {very} friendly",
            "friendly staff who were {very} helpful",
        ],
    ),
    (
        "location",
        &[
            "{very} great location close to the beach",
            "the location is {very} close to the beach",
            "the hotel is {very} close to the beach",
            "{very} perfect location next to the beach",
        ],
    ),
    (
        "noise",
        &[
            "the street was {very} noisy at night",
            "{very} loud street noise at night",
            "traffic noise was {very} loud at night",
            "it was {very} noisy every night",
        ],
    ),
    (
        "wifi",
        &[
            "the wifi was {very} slow",
            "{very} slow and unreliable wifi",
            "wifi kept dropping and was {very} slow",
            "internet was {very} slow",
        ],
    ),
    (
        "parking",
        &[
            "parking was {very} expensive",
            "{very} expensive parking fees",
            "the parking garage was {very} expensive",
            "we paid a {very} expensive parking fee",
        ],
    ),
    (
        "bed",
        &[
            "the bed was {very} comfortable",
            "{very} comfortable bed and pillows",
            "the beds were {very} comfortable",
            "we slept well in a {very} comfortable bed",
        ],
    ),
];

const INTENSIFIERS: &[&str] = &["", "very", "really", "so", "quite", "extremely"];

/// Entities whose sentences paraphrase a fixed set of opinions. In every
/// entity a `dominant_share` fraction of the sentences paraphrase one opinion
/// (rotating across entities) and the rest are spread evenly over the other
/// opinions. Labels are opinion indices; `dominant[e]` is entity `e`'s
/// planted majority.
pub fn planted_popularity_corpus(
    seed: u64,
    entities: usize,
    sentences_per_entity: usize,
    dominant_share: f64,
) -> (LabeledCorpus, Vec<usize>) {
    let mut rng = derive_rng(seed, "popularity");
    let n_ops = OPINIONS.len();
    let mut out = Vec::new();
    let mut labels = Vec::new();
    let mut dominant = Vec::new();
    for e in 0..entities {
        let dom = e % n_ops;
        let n_dom = (sentences_per_entity as f64 * dominant_share).round() as usize;
        let mut lab: Vec<usize> = vec![dom; n_dom];
        let others: Vec<usize> = (0..n_ops).filter(|&o| o != dom).collect();
        for i in 0..sentences_per_entity - n_dom {
            lab.push(others[i % others.len()]);
        }
        lab.shuffle(&mut rng);
        let sents = lab
            .iter()
            .map(|&o| {
                let t = pick(&mut rng, OPINIONS[o].1);
                fill(t, &mut rng, &[("very", INTENSIFIERS)])
            })
            .collect();
        out.push((format!("hotel-{e:02}"), sents));
        labels.push(lab);
        dominant.push(dom);
    }
    let corpus = pack("planted-popularity", out, 5);
    (
        LabeledCorpus {
            corpus,
            labels,
            label_names: OPINIONS.iter().map(|(n, _)| n.to_string()).collect(),
        },
        dominant,
    )
}

const ASPECTS: &[(&str, [&str; 5], &[&str])] = &[
    (
        "rooms",
        ["room", "bed", "bathroom", "shower", "pillow"],
        &[
            "the room was {adj} and bright",
            "the bed was {adj}",
            "the bathroom had a {adj} shower",
            "a {adj} pillow on every bed",
            "our room had a {adj} window",
            "{adj} shower in the bathroom",
        ],
    ),
    (
        "service",
        ["staff", "reception", "manager", "concierge", "desk"],
        &[
            "the staff greeted us {manner}",
            "reception handled check in {manner}",
            "the manager helped us {manner}",
            "the concierge booked a taxi {manner}",
            "the front desk answered {manner}",
            "staff at reception replied {manner}",
        ],
    ),
    (
        "food",
        ["breakfast", "dinner", "coffee", "restaurant", "menu"],
        &[
            "breakfast had {taste} fruit",
            "dinner at the restaurant was {taste}",
            "the coffee was {taste}",
            "the menu had {taste} dishes",
            "{taste} breakfast with coffee",
            "the restaurant served {taste} food",
        ],
    ),
];

const ROOM_ADJ: &[&str] = &["large", "small", "soft", "spotless", "tiny", "huge"];
const MANNER: &[&str] = &["quickly", "kindly", "politely", "warmly", "promptly", "slowly"];
const TASTES: &[&str] = &["fresh", "tasty", "cold", "delicious", "bland", "great"];

/// Query terms for the planted aspect corpus.
pub fn planted_aspect_config() -> AspectConfig {
    AspectConfig {
        aspects: ASPECTS
            .iter()
            .map(|(name, terms, _)| AspectSpec {
                name: name.to_string(),
                terms: terms.iter().map(|t| t.to_string()).collect(),
            })
            .collect(),
    }
}

fn aspect_sentence(rng: &mut SeededRng, a: usize) -> String {
    let t = pick(rng, ASPECTS[a].2);
    fill(t, rng, &[("adj", ROOM_ADJ), ("manner", MANNER), ("taste", TASTES)])
}

/// Entities with sentences about three pseudo-aspects in equal shares,
/// labelled with the aspect index.
pub fn planted_aspect_corpus(seed: u64, entities: usize, sentences_per_entity: usize) -> LabeledCorpus {
    let mut rng = derive_rng(seed, "aspects");
    let mut out = Vec::new();
    let mut labels = Vec::new();
    for e in 0..entities {
        let mut lab: Vec<usize> = (0..sentences_per_entity).map(|i| i % ASPECTS.len()).collect();
        lab.shuffle(&mut rng);
        let sents = lab.iter().map(|&a| aspect_sentence(&mut rng, a)).collect();
        out.push((format!("hotel-{e:02}"), sents));
        labels.push(lab);
    }
    LabeledCorpus {
        corpus: pack("planted-aspects", out, 5),
        labels,
        label_names: ASPECTS.iter().map(|(n, _, _)| n.to_string()).collect(),
    }
}

/// Assignment table over aspect-labelled sentences in which head
/// `planted` maps each aspect to its own block of codes while every other
/// head assigns codes at random. Returns the table, the sentence texts and
/// the planted head.
pub fn planted_aspect_head_table(
    seed: u64,
    sentences: usize,
    heads: usize,
    codes_per_head: usize,
) -> (AssignmentTable, Vec<String>, usize) {
    let mut rng = derive_rng(seed, "aspect-head");
    let planted = rng.gen_range(0..heads);
    let n_aspects = ASPECTS.len();
    assert!(codes_per_head >= n_aspects, "need at least one code per aspect");
    let k = heads * codes_per_head;
    let mut texts = Vec::with_capacity(sentences);
    let mut assignments = Vec::with_capacity(sentences * heads);
    for i in 0..sentences {
        let a = i % n_aspects;
        texts.push(aspect_sentence(&mut rng, a));
        for h in 0..heads {
            let base = h * codes_per_head;
            let code = if h == planted {
                // codes of this head are split into aspect blocks
                let block = codes_per_head / n_aspects;
                base + a * block + rng.gen_range(0..block)
            } else {
                base + rng.gen_range(0..codes_per_head)
            };
            assignments.push((code, 0.0));
        }
    }
    let mut popularity = vec![0u64; k];
    for &(c, _) in &assignments {
        popularity[c] += 1;
    }
    (
        AssignmentTable {
            heads,
            assignments,
            popularity,
        },
        texts,
        planted,
    )
}
