use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{BenchItem, Dataset};
use crate::image::{FactSet, ImageRef};
use crate::model::{option_letter, CfQuestion};
use crate::rng::derived_rng;

const OBJECTS: &[&str] = &[
    "cat", "dog", "car", "cup", "bench", "ball", "lamp", "chair", "bird", "kite",
];
const COLORS: &[&str] = &["red", "black", "white", "blue", "green", "yellow"];

/// Fact-set VQA items cycling through attribute, presence and counting
/// questions. Same `(n, seed)`, same items.
pub fn synthetic_items(n: usize, seed: u64) -> Vec<BenchItem> {
    (0..n).map(|i| synthetic_item(i, seed)).collect()
}

fn synthetic_item(i: usize, seed: u64) -> BenchItem {
    let mut rng = derived_rng(seed, &format!("synthetic/{i}"));
    let objects: Vec<&str> = OBJECTS.choose_multiple(&mut rng, 3).copied().collect();
    let mut pairs: Vec<(String, String)> = Vec::new();
    for o in &objects {
        pairs.push((format!("{o}.color"), COLORS.choose(&mut rng).unwrap().to_string()));
    }
    let subject = objects[0];
    let (track, prompt, focus, options, gold) = match i % 3 {
        0 => {
            let truth = pairs[0].1.clone();
            let mut options: Vec<String> = COLORS
                .iter()
                .filter(|c| **c != truth)
                .copied()
                .collect::<Vec<_>>()
                .choose_multiple(&mut rng, 3)
                .map(|c| c.to_string())
                .collect();
            options.push(truth.clone());
            options.shuffle(&mut rng);
            let idx = options.iter().position(|o| *o == truth).unwrap();
            (
                "attribute",
                format!("What color is the {subject}?"),
                format!("{subject}.color"),
                options,
                option_letter(idx).to_string(),
            )
        }
        1 => {
            pairs.push((format!("{subject}.present"), "yes".into()));
            (
                "presence",
                format!("Is there a {subject} in the image?"),
                format!("{subject}.present"),
                Vec::new(),
                "yes".to_string(),
            )
        }
        _ => {
            let count = rng.random_range(1..=4u32).to_string();
            pairs.push((format!("{subject}.count"), count.clone()));
            (
                "count",
                format!("How many {subject}s are there?"),
                format!("{subject}.count"),
                Vec::new(),
                count,
            )
        }
    };
    let facts = FactSet::uniform(pairs);
    let question = CfQuestion::new(prompt, ImageRef::from_facts(facts))
        .expect("non-empty prompt")
        .with_options(options)
        .with_focus(focus)
        .with_gold(gold.clone());
    BenchItem {
        item_id: format!("syn-{i:04}"),
        question,
        dataset: Dataset::Synthetic,
        track: Some(track.into()),
        question_group: None,
        figure_group: None,
        label: gold,
    }
}
