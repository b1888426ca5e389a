//! Synthetic biography protocol: fixed-pool people, fact statements for
//! pretraining, and question-answer lines for fine-tuning.
//!
//! Every rendered sequence is exactly [`SEQ_TOKENS`] tokens long and every
//! answer is a single token from an attribute pool, so the hard first-token
//! metric is well defined at a fixed position.

use super::{BenchError, Result};
use crate::numerics::init_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const FIRST_NAMES: [&str; 48] = [
    "alice", "benjamin", "clara", "daniel", "elena", "felix", "grace", "henry", "iris", "jonas",
    "katie", "liam", "mara", "noah", "olivia", "pavel", "quinn", "rosa", "samuel", "tessa",
    "ulrich", "vera", "walter", "xenia", "yusuf", "zoe", "aaron", "bianca", "carlos", "diana",
    "emil", "fiona", "gustav", "hannah", "ivan", "julia", "kevin", "lena", "marcus", "nina",
    "oscar", "petra", "ramon", "sofia", "tobias", "ursula", "viktor", "wanda",
];

const LAST_NAMES: [&str; 48] = [
    "anders", "baker", "castillo", "dubois", "eriksen", "fischer", "gruber", "hoffman", "ibrahim",
    "jansen", "keller", "larsen", "meyer", "nakamura", "olsen", "petrov", "quiroga", "rossi",
    "schmidt", "tanaka", "ueda", "vasquez", "weber", "xu", "yamada", "zhang", "abbott", "bauer",
    "carver", "duke", "ellison", "ferrara", "garner", "holt", "inoue", "jensen", "kovacs",
    "lindgren", "moreau", "novak", "ortega", "palmer", "quist", "reyes", "silva", "thorpe",
    "ungar", "varga",
];

const BIRTHDAYS: [&str; 32] = [
    "january-04", "february-11", "march-19", "april-23", "may-30", "june-07", "july-15",
    "august-26", "september-02", "october-12", "november-21", "december-28", "january-17",
    "february-25", "march-06", "april-09", "may-14", "june-20", "july-29", "august-03",
    "september-16", "october-24", "november-08", "december-13", "january-31", "february-05",
    "march-27", "april-18", "may-01", "june-22", "july-10", "august-09",
];

const CITIES: [&str; 24] = [
    "amsterdam", "barcelona", "calgary", "dresden", "edinburgh", "fukuoka", "geneva", "helsinki",
    "istanbul", "jakarta", "kyoto", "lisbon", "marseille", "nairobi", "oslo", "prague", "quebec",
    "rotterdam", "seville", "tampere", "utrecht", "valencia", "warsaw", "zurich",
];

const UNIVERSITIES: [&str; 24] = [
    "aldergate", "briarcliff", "coltondale", "dunmore", "eastfield", "fernworth", "glenhaven",
    "harrowgate", "ironwood", "jessop", "kingsbridge", "lockhart", "millbrook", "northgate",
    "oakhurst", "pembroke", "quarrington", "redmond", "stanhope", "thornfield", "underhill",
    "vantage", "westlake", "yorkfield",
];

const MAJORS: [&str; 24] = [
    "accounting", "biology", "chemistry", "design", "economics", "forestry", "geology", "history",
    "informatics", "journalism", "kinesiology", "linguistics", "mathematics", "neuroscience",
    "oceanography", "philosophy", "physics", "robotics", "statistics", "theology", "urbanism",
    "virology", "welding", "zoology",
];

const COMPANIES: [&str; 24] = [
    "acmeworks", "brightforge", "cobaltsoft", "dynacore", "everpeak", "fluxline", "gridware",
    "hollowtree", "ironclad", "junctura", "kitewind", "lumenbay", "macroplane", "northwind",
    "oreline", "pinnacle", "quartzite", "ridgeline", "sunforge", "tidemark", "umberline",
    "vexcorp", "wavecrest", "zenithline",
];

/// Middle words of each statement template, indexed like [`ATTRIBUTES`].
const STATEMENT_WORDS: [[&str; 3]; 6] = [
    ["was", "born", "on"],
    ["comes", "from", "city"],
    ["studied", "at", "university"],
    ["majored", "in", "field"],
    ["works", "at", "company"],
    ["is", "employed", "in"],
];

/// Question keyword per attribute, indexed like [`ATTRIBUTES`].
const QA_KEYWORDS: [&str; 6] = [
    "birthday",
    "birthcity",
    "university",
    "major",
    "employer",
    "workcity",
];

/// Tokens per rendered sequence, statements and questions alike.
pub const SEQ_TOKENS: usize = 7;

/// Position of the single-token answer inside a rendered question.
pub const ANSWER_POS: usize = 5;

/// The six facts attached to every person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Birthday,
    BirthCity,
    University,
    Major,
    Company,
    CompanyCity,
}

pub const ATTRIBUTES: [Attribute; 6] = [
    Attribute::Birthday,
    Attribute::BirthCity,
    Attribute::University,
    Attribute::Major,
    Attribute::Company,
    Attribute::CompanyCity,
];

impl Attribute {
    fn index(self) -> usize {
        ATTRIBUTES.iter().position(|&a| a == self).expect("listed")
    }

    pub fn value(self, p: &Person) -> usize {
        match self {
            Attribute::Birthday => p.birthday,
            Attribute::BirthCity => p.birth_city,
            Attribute::University => p.university,
            Attribute::Major => p.major,
            Attribute::Company => p.company,
            Attribute::CompanyCity => p.company_city,
        }
    }
}

/// One synthetic individual. All fields except `id` are vocabulary token
/// ids, so rendering is concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub id: usize,
    pub first: usize,
    pub last: usize,
    pub birthday: usize,
    pub birth_city: usize,
    pub university: usize,
    pub major: usize,
    pub company: usize,
    pub company_city: usize,
}

/// Word-level vocabulary: specials, template words, then the attribute
/// pools in fixed order. Built deterministically, never trained.
#[derive(Debug, Clone)]
pub struct BioVocab {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
    pub pad: usize,
    pub eos: usize,
    first: (usize, usize),
    last: (usize, usize),
    birthday: (usize, usize),
    city: (usize, usize),
    university: (usize, usize),
    major: (usize, usize),
    company: (usize, usize),
}

impl BioVocab {
    fn build() -> BioVocab {
        let mut tokens: Vec<String> = Vec::new();
        let mut lookup = HashMap::new();
        let push = |tokens: &mut Vec<String>, lookup: &mut HashMap<String, usize>, w: &str| {
            if let Some(&id) = lookup.get(w) {
                return id;
            }
            let id = tokens.len();
            tokens.push(w.to_string());
            lookup.insert(w.to_string(), id);
            id
        };
        let pad = push(&mut tokens, &mut lookup, "<pad>");
        let eos = push(&mut tokens, &mut lookup, "<eos>");
        push(&mut tokens, &mut lookup, "q");
        push(&mut tokens, &mut lookup, "a");
        for words in STATEMENT_WORDS {
            for w in words {
                push(&mut tokens, &mut lookup, w);
            }
        }
        for w in QA_KEYWORDS {
            push(&mut tokens, &mut lookup, w);
        }
        let pool = |tokens: &mut Vec<String>,
                        lookup: &mut HashMap<String, usize>,
                        words: &[&str]| {
            let start = tokens.len();
            for w in words {
                let id = push(tokens, lookup, w);
                assert_eq!(id, tokens.len() - 1, "pool word {w} duplicates an earlier token");
            }
            (start, words.len())
        };
        let first = pool(&mut tokens, &mut lookup, &FIRST_NAMES);
        let last = pool(&mut tokens, &mut lookup, &LAST_NAMES);
        let birthday = pool(&mut tokens, &mut lookup, &BIRTHDAYS);
        let city = pool(&mut tokens, &mut lookup, &CITIES);
        let university = pool(&mut tokens, &mut lookup, &UNIVERSITIES);
        let major = pool(&mut tokens, &mut lookup, &MAJORS);
        let company = pool(&mut tokens, &mut lookup, &COMPANIES);
        BioVocab {
            tokens,
            lookup,
            pad,
            eos,
            first,
            last,
            birthday,
            city,
            university,
            major,
            company,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.lookup.get(word).copied()
    }

    fn word(&self, w: &str) -> usize {
        self.id(w).expect("template word is in the vocabulary")
    }
}

/// Disjoint person populations: a pretraining pool, the first question set
/// (task 0), and previously unseen individuals for task 1.
#[derive(Debug, Clone)]
pub struct BioSplit {
    pub pretrain: Vec<Person>,
    pub task0: Vec<Person>,
    pub task1: Vec<Person>,
}

/// One rendered question with its gold answer in place.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub tokens: Vec<usize>,
    /// Index of the answer token; the metric reads the model's prediction
    /// at `answer_pos - 1`.
    pub answer_pos: usize,
    pub person: usize,
    pub attribute: Attribute,
}

/// Generated population plus the vocabulary everything is rendered in.
#[derive(Debug, Clone)]
pub struct BioData {
    pub vocab: BioVocab,
    pub persons: Vec<Person>,
    pub split: BioSplit,
}

/// Samples `n` unique people and splits them `n/2`, `n/4`, `n/10` into
/// pretrain, task 0, and task 1 populations. Identity is the (first, last)
/// name pair, drawn without replacement.
pub fn gen_biographies(n: usize, seed: u64) -> Result<BioData> {
    if n == 0 {
        return Err(BenchError::InvalidConfig(
            "need at least one person".into(),
        ));
    }
    let available = FIRST_NAMES.len() * LAST_NAMES.len();
    if n > available {
        return Err(BenchError::Combinatorics {
            requested: n,
            available,
        });
    }
    let vocab = BioVocab::build();
    let mut rng = init_rng(seed);
    let mut name_pairs: Vec<(usize, usize)> = (0..FIRST_NAMES.len())
        .flat_map(|f| (0..LAST_NAMES.len()).map(move |l| (f, l)))
        .collect();
    name_pairs.shuffle(&mut rng);

    let draw = |range: (usize, usize), rng: &mut rand_chacha::ChaCha8Rng| {
        range.0 + rng.gen_range(0..range.1)
    };
    let persons: Vec<Person> = name_pairs[..n]
        .iter()
        .enumerate()
        .map(|(id, &(f, l))| Person {
            id,
            first: vocab.first.0 + f,
            last: vocab.last.0 + l,
            birthday: draw(vocab.birthday, &mut rng),
            birth_city: draw(vocab.city, &mut rng),
            university: draw(vocab.university, &mut rng),
            major: draw(vocab.major, &mut rng),
            company: draw(vocab.company, &mut rng),
            company_city: draw(vocab.city, &mut rng),
        })
        .collect();

    let (n0, n1, n2) = (n / 2, n / 4, n / 10);
    let split = BioSplit {
        pretrain: persons[..n0].to_vec(),
        task0: persons[n0..n0 + n1].to_vec(),
        task1: persons[n0 + n1..n0 + n1 + n2].to_vec(),
    };
    Ok(BioData {
        vocab,
        persons,
        split,
    })
}

impl BioData {
    /// Six fact statements per person, each exactly [`SEQ_TOKENS`] tokens.
    pub fn statements(&self, persons: &[Person]) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(persons.len() * ATTRIBUTES.len());
        for p in persons {
            for attr in ATTRIBUTES {
                let words = STATEMENT_WORDS[attr.index()];
                out.push(vec![
                    p.first,
                    p.last,
                    self.vocab.word(words[0]),
                    self.vocab.word(words[1]),
                    self.vocab.word(words[2]),
                    attr.value(p),
                    self.vocab.eos,
                ]);
            }
        }
        out
    }

    /// Six question-answer lines per person, answer at [`ANSWER_POS`].
    pub fn qa_items(&self, persons: &[Person]) -> Vec<QaItem> {
        let mut out = Vec::with_capacity(persons.len() * ATTRIBUTES.len());
        for p in persons {
            for attr in ATTRIBUTES {
                let tokens = vec![
                    self.vocab.word("q"),
                    self.vocab.word(QA_KEYWORDS[attr.index()]),
                    p.first,
                    p.last,
                    self.vocab.word("a"),
                    attr.value(p),
                    self.vocab.eos,
                ];
                out.push(QaItem {
                    tokens,
                    answer_pos: ANSWER_POS,
                    person: p.id,
                    attribute: attr,
                });
            }
        }
        out
    }

    /// Token sequences of the QA lines, for perplexity or training.
    pub fn qa_sequences(&self, persons: &[Person]) -> Vec<Vec<usize>> {
        self.qa_items(persons).into_iter().map(|q| q.tokens).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generation_is_deterministic_under_a_seed() {
        let a = gen_biographies(40, 7).unwrap();
        let b = gen_biographies(40, 7).unwrap();
        assert_eq!(a.persons, b.persons);
        assert_eq!(
            a.statements(&a.persons),
            b.statements(&b.persons)
        );
        assert_eq!(a.qa_items(&a.persons), b.qa_items(&b.persons));
        let c = gen_biographies(40, 8).unwrap();
        assert_ne!(a.persons, c.persons);
    }

    #[test]
    fn one_person_yields_six_answerable_questions() {
        let data = gen_biographies(1, 3).unwrap();
        assert_eq!(data.persons.len(), 1);
        let qa = data.qa_items(&data.persons);
        assert_eq!(qa.len(), 6);
        let p = &data.persons[0];
        for item in &qa {
            assert_eq!(item.tokens.len(), SEQ_TOKENS);
            assert_eq!(item.answer_pos, ANSWER_POS);
            assert_eq!(item.tokens[item.answer_pos], item.attribute.value(p));
            assert!(item.tokens.iter().all(|&t| t < data.vocab.size()));
        }
    }

    #[test]
    fn toy_default_splits_follow_the_expected_proportions() {
        let data = gen_biographies(2000, 0).unwrap();
        assert_eq!(data.split.pretrain.len(), 1000);
        assert_eq!(data.split.task0.len(), 500);
        assert_eq!(data.split.task1.len(), 200);

        let seen: HashSet<usize> = data
            .split
            .pretrain
            .iter()
            .chain(&data.split.task0)
            .map(|p| p.id)
            .collect();
        assert!(data.split.task1.iter().all(|p| !seen.contains(&p.id)));

        let names: HashSet<(usize, usize)> =
            data.persons.iter().map(|p| (p.first, p.last)).collect();
        assert_eq!(names.len(), data.persons.len(), "name pairs must be unique");
    }

    #[test]
    fn statements_are_uniform_length_and_in_vocabulary() {
        let data = gen_biographies(12, 1).unwrap();
        let lines = data.statements(&data.persons);
        assert_eq!(lines.len(), 72);
        for line in &lines {
            assert_eq!(line.len(), SEQ_TOKENS);
            assert!(line.iter().all(|&t| t < data.vocab.size()));
            assert_eq!(*line.last().unwrap(), data.vocab.eos);
        }
    }

    #[test]
    fn oversized_populations_are_rejected() {
        let err = gen_biographies(48 * 48 + 1, 0).unwrap_err();
        assert!(matches!(
            err,
            BenchError::Combinatorics {
                requested: 2305,
                available: 2304
            }
        ));
        assert!(gen_biographies(48 * 48, 0).is_ok());
    }

    #[test]
    fn vocabulary_is_stable_and_collision_free() {
        let v = BioVocab::build();
        assert_eq!(v.size(), 249);
        assert_eq!(v.pad, 0);
        assert_eq!(v.eos, 1);
        assert_eq!(v.token(v.id("birthday").unwrap()), "birthday");
        assert!(v.id("nonexistent-word").is_none());
    }
}
