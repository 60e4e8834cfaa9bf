//! A small synthetic graph over a country/language/capital/currency schema
//! and 40 templated questions over it. Used by the tests, the overfit
//! experiment and the browser demo.

use crate::evaluation::QAPair;
use crate::kb::{EntityId, KnowledgeGraph, RelationId, Triple};

pub const TYPE_RELATION: &str = "is_a";
pub const SPOKEN_IN: &str = "/language/human_language/countries_spoken_in";
pub const CAPITAL: &str = "/location/country/capital";
pub const CURRENCY: &str = "/location/country/currency_used";
pub const HEAD_OF_STATE: &str = "/location/country/head_of_state";
pub const BORN_IN: &str = "/people/person/place_of_birth";

struct Country {
    id: &'static str,
    name: &'static str,
    demonym: &'static str,
    languages: &'static [&'static str],
    capital: (&'static str, &'static str),
    currency: (&'static str, &'static str),
    head: (&'static str, &'static str),
}

const LANGUAGES: [(&str, &str); 6] = [
    ("/m/01428", "Jamaican English"),
    ("/m/toy_portuguese", "Portuguese"),
    ("/m/toy_spanish", "Spanish"),
    ("/m/toy_english", "English"),
    ("/m/toy_french", "French"),
    ("/m/toy_arabic", "Arabic"),
];

const COUNTRIES: [Country; 6] = [
    Country {
        id: "/m/03_r3",
        name: "Jamaica",
        demonym: "jamaican",
        languages: &["/m/01428"],
        capital: ("/m/toy_kingston", "Kingston"),
        currency: ("/m/toy_jmd", "Jamaican dollar"),
        head: ("/m/toy_marlow", "Ada Marlow"),
    },
    Country {
        id: "/m/toy_brazil",
        name: "Brazil",
        demonym: "brazilian",
        languages: &["/m/toy_portuguese"],
        capital: ("/m/toy_brasilia", "Brasilia"),
        currency: ("/m/toy_brl", "Brazilian real"),
        head: ("/m/toy_ferreira", "Tomas Ferreira"),
    },
    Country {
        id: "/m/toy_mexico",
        name: "Mexico",
        demonym: "mexican",
        languages: &["/m/toy_spanish"],
        capital: ("/m/toy_mexico_city", "Mexico City"),
        currency: ("/m/toy_mxn", "Mexican peso"),
        head: ("/m/toy_serrano", "Lucia Serrano"),
    },
    Country {
        id: "/m/toy_canada",
        name: "Canada",
        demonym: "canadian",
        languages: &["/m/toy_english", "/m/toy_french"],
        capital: ("/m/toy_ottawa", "Ottawa"),
        currency: ("/m/toy_cad", "Canadian dollar"),
        head: ("/m/toy_holt", "Evan Holt"),
    },
    Country {
        id: "/m/toy_egypt",
        name: "Egypt",
        demonym: "egyptian",
        languages: &["/m/toy_arabic"],
        capital: ("/m/toy_cairo", "Cairo"),
        currency: ("/m/toy_egp", "Egyptian pound"),
        head: ("/m/toy_nassar", "Karim Nassar"),
    },
    Country {
        id: "/m/toy_australia",
        name: "Australia",
        demonym: "australian",
        languages: &["/m/toy_english"],
        capital: ("/m/toy_canberra", "Canberra"),
        currency: ("/m/toy_aud", "Australian dollar"),
        head: ("/m/toy_whitby", "Grace Whitby"),
    },
];

const TYPES: [(&str, &str); 5] = [
    ("/type/country", "country"),
    ("/type/human_language", "human language"),
    ("/type/city", "city"),
    ("/type/currency", "currency"),
    ("/type/person", "person"),
];

/// Triples and `(entity, alias)` names of the toy graph.
pub fn toy_facts() -> (Vec<Triple>, Vec<(EntityId, String)>) {
    let mut triples = Vec::new();
    let mut names: Vec<(EntityId, String)> = Vec::new();
    let mut name = |id: &str, alias: &str| names.push((EntityId::new(id), alias.to_string()));

    for (id, alias) in TYPES {
        name(id, alias);
    }
    for (id, alias) in LANGUAGES {
        name(id, alias);
        triples.push(Triple::new(id, TYPE_RELATION, "/type/human_language"));
    }
    for c in &COUNTRIES {
        name(c.id, c.name);
        name(c.id, c.demonym);
        name(c.capital.0, c.capital.1);
        name(c.currency.0, c.currency.1);
        name(c.head.0, c.head.1);
        triples.push(Triple::new(c.id, TYPE_RELATION, "/type/country"));
        triples.push(Triple::new(c.capital.0, TYPE_RELATION, "/type/city"));
        triples.push(Triple::new(c.currency.0, TYPE_RELATION, "/type/currency"));
        triples.push(Triple::new(c.head.0, TYPE_RELATION, "/type/person"));
        for lang in c.languages {
            triples.push(Triple::new(lang, SPOKEN_IN, c.id));
        }
        triples.push(Triple::new(c.id, CAPITAL, c.capital.0));
        triples.push(Triple::new(c.id, CURRENCY, c.currency.0));
        triples.push(Triple::new(c.id, HEAD_OF_STATE, c.head.0));
        triples.push(Triple::new(c.head.0, BORN_IN, c.capital.0));
    }
    (triples, names)
}

pub fn toy_kb() -> KnowledgeGraph {
    let (triples, names) = toy_facts();
    KnowledgeGraph::from_parts(triples, names, RelationId::new(TYPE_RELATION))
}

fn language_name(id: &str) -> String {
    LANGUAGES
        .iter()
        .find(|(l, _)| *l == id)
        .map(|(_, n)| n.to_string())
        .expect("known language")
}

/// 36 country questions (six templates per country) and four birthplace
/// questions.
pub fn toy_dataset() -> Vec<QAPair> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for c in &COUNTRIES {
        let langs: Vec<String> = c.languages.iter().map(|l| language_name(l)).collect();
        let country = c.name.to_lowercase();
        out.push((
            format!("what does {} people speak?", c.demonym),
            langs.clone(),
        ));
        out.push((format!("what languages are spoken in {country}?"), langs));
        out.push((
            format!("what is the capital of {country}?"),
            vec![c.capital.1.into()],
        ));
        out.push((
            format!("what currency does {country} use?"),
            vec![c.currency.1.into()],
        ));
        out.push((
            format!("who is the head of state of {country}?"),
            vec![c.head.1.into()],
        ));
        out.push((format!("who leads {country}?"), vec![c.head.1.into()]));
    }
    for c in COUNTRIES.iter().take(4) {
        out.push((
            format!("where was {} born?", c.head.1.to_lowercase()),
            vec![c.capital.1.into()],
        ));
    }
    out.into_iter()
        .enumerate()
        .map(|(i, (question, answers))| QAPair {
            id: i as u64 + 1,
            question,
            answers,
        })
        .collect()
}
