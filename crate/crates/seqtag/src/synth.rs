//! Deterministic synthetic corpus generator for self-contained training
//! and evaluation runs.
//!
//! Every entity class draws its surface forms from its own stem set, so
//! token identity alone determines the class. Within a class, a few
//! "pivot" words occur both entity-initial (B) and entity-internal (I)
//! depending on the form, which a per-token classifier cannot resolve
//! but a contextual encoder can. Filler vocabulary is disjoint from all
//! entity vocabulary, and entities are always separated by at least one
//! filler token.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{bio_from_spans, EntitySpan, EntityType, Sentence};

const STEMS: [[&str; 8]; 6] = [
    // PER
    ["Mar", "Tol", "Ves", "Ron", "Sel", "Dar", "Lin", "Kor"],
    // LOC
    ["Bel", "Nor", "Gal", "Vor", "Ter", "Mol", "Zan", "Pir"],
    // GRP
    ["Fen", "Rud", "Hax", "Quor", "Jes", "Wik", "Yol", "Bran"],
    // CORP
    ["Zuv", "Plex", "Onv", "Trik", "Gam", "Lum", "Sek", "Dov"],
    // PROD
    ["Vit", "Nym", "Crel", "Osk", "Tav", "Brix", "Fum", "Gril"],
    // CW
    ["Eld", "Sag", "Myr", "Thal", "Ulf", "Ix", "Qued", "Wyn"],
];

/// Words that may only appear as the first token of an entity.
fn heads(class: usize) -> Vec<String> {
    STEMS[class].iter().map(|s| format!("{s}a")).collect()
}

/// Words that may only appear after the first token.
fn tails(class: usize) -> Vec<String> {
    STEMS[class].iter().map(|s| format!("{s}een")).collect()
}

/// Words that appear in both positions depending on the form.
fn pivots(class: usize) -> Vec<String> {
    STEMS[class][..2].iter().map(|s| format!("{s}ix")).collect()
}

/// All surface forms of one class. Pivot words begin two forms and
/// continue one, so entity-initial is their majority role.
fn forms(class: usize) -> Vec<Vec<String>> {
    let heads = heads(class);
    let tails = tails(class);
    let mut forms: Vec<Vec<String>> = Vec::new();
    for h in &heads[..4] {
        forms.push(vec![h.clone()]);
    }
    for (h, t) in heads.iter().zip(&tails) {
        forms.push(vec![h.clone(), t.clone()]);
    }
    for (i, p) in pivots(class).into_iter().enumerate() {
        forms.push(vec![p.clone(), tails[2 * i].clone()]);
        forms.push(vec![p.clone(), tails[2 * i + 1].clone()]);
        forms.push(vec![heads[4 + i].clone(), p]);
    }
    forms
}

const FILLERS: [(&str, &str); 24] = [
    ("the", "DT"),
    ("a", "DT"),
    ("this", "DT"),
    ("met", "VBD"),
    ("saw", "VBD"),
    ("joined", "VBD"),
    ("praised", "VBD"),
    ("left", "VBD"),
    ("visited", "VBD"),
    ("reviewed", "VBD"),
    ("near", "IN"),
    ("with", "IN"),
    ("after", "IN"),
    ("before", "IN"),
    ("about", "IN"),
    ("report", "NN"),
    ("meeting", "NN"),
    ("launch", "NN"),
    ("tour", "NN"),
    ("crowd", "NN"),
    ("yesterday", "RB"),
    ("quietly", "RB"),
    ("new", "JJ"),
    ("famous", "JJ"),
];

/// Generates `count` tagged sentences with POS columns and ids "s0",
/// "s1", ... The same (count, seed) pair always yields the same corpus.
pub fn generate(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_forms: Vec<Vec<Vec<String>>> = (0..6).map(forms).collect();
    let mut out = Vec::with_capacity(count);

    for i in 0..count {
        let mut tokens: Vec<String> = Vec::new();
        let mut pos: Vec<String> = Vec::new();
        let mut spans = std::collections::BTreeSet::new();

        let push_fillers = |tokens: &mut Vec<String>, pos: &mut Vec<String>, rng: &mut ChaCha8Rng| {
            for _ in 0..rng.random_range(1..=3) {
                let (w, p) = FILLERS.choose(rng).unwrap();
                tokens.push((*w).into());
                pos.push((*p).into());
            }
        };

        let entities = if rng.random_bool(0.4) { 2 } else { 1 };
        push_fillers(&mut tokens, &mut pos, &mut rng);
        for _ in 0..entities {
            let class = rng.random_range(0..6);
            let form = class_forms[class].choose(&mut rng).unwrap();
            let start = tokens.len();
            for w in form {
                tokens.push(w.clone());
                pos.push("NNP".into());
            }
            spans.insert(EntitySpan {
                start,
                end: tokens.len() - 1,
                entity_type: EntityType::ALL[class],
            });
            push_fillers(&mut tokens, &mut pos, &mut rng);
        }

        let tags = bio_from_spans(&spans, tokens.len()).expect("generated spans are valid");
        let mut s = Sentence::new(tokens);
        s.gold_tags = Some(tags);
        s.pos_tags = Some(pos);
        s.id = Some(format!("s{i}"));
        out.push(s);
    }
    out
}
