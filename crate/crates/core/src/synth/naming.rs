use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Archetype;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "sa", "tor", "vel", "di", "qua", "ber", "no", "zan", "fi", "lu", "mar", "pe", "ros",
    "te", "gal", "vin", "cor", "ma", "sel", "ba",
];

fn kind_noun(archetype: Archetype, category: Option<&str>) -> &'static str {
    match (archetype, category) {
        (Archetype::Solid3d, Some("Sculptures")) => "statue",
        (_, Some("Murals")) => "mural",
        (Archetype::FlatSmall, _) => "portrait",
        (Archetype::FlatLarge, _) => "cathedral",
        (Archetype::FacadeDetail, _) => "portal",
        (Archetype::Solid3d, _) => "tower",
        (Archetype::Panorama, _) => "skyline",
    }
}

/// Draws a fresh two-word object name such as "kaloren tower".
pub(super) fn object_name(rng: &mut ChaCha8Rng, archetype: Archetype, category: Option<&str>, taken: &mut HashSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        let name = format!("{word} {}", kind_noun(archetype, category));
        if taken.insert(name.clone()) {
            return name;
        }
    }
}

/// Drops or transposes one letter, never returning the input.
pub(super) fn misspell(rng: &mut ChaCha8Rng, name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphabetic()).collect();
    for _ in 0..16 {
        let i = *letters.choose(rng).expect("names contain letters");
        let mut out = chars.clone();
        if rng.random_bool(0.5) || i + 1 >= out.len() {
            out.remove(i);
        } else {
            out.swap(i, i + 1);
        }
        let s: String = out.into_iter().collect();
        if s != name && !s.trim().is_empty() {
            return s;
        }
    }
    format!("{name}e")
}

/// Camera-style file name used as a photo title.
pub(super) fn camera_filename(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..3) {
        0 => format!("DSC{:05}.JPG", rng.random_range(0..100_000)),
        1 => format!("IMG_{:04}.jpg", rng.random_range(0..10_000)),
        _ => format!("{}", rng.random_range(1_000_000..99_999_999u64)),
    }
}

/// Shuffles the letter case of a tag the way users type it.
pub(super) fn user_casing(rng: &mut ChaCha8Rng, tag: &str) -> String {
    match rng.random_range(0..3) {
        0 => tag.to_string(),
        1 => tag.to_uppercase(),
        _ => tag
            .split(' ')
            .map(|w| {
                let mut c = w.chars();
                match c.next() {
                    Some(f) => f.to_uppercase().chain(c).collect(),
                    None => String::new(),
                }
            })
            .collect::<Vec<_>>()
            .join(" "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_unique_and_misspellings_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut taken = HashSet::new();
        for _ in 0..200 {
            let n = object_name(&mut rng, Archetype::FlatSmall, None, &mut taken);
            assert_ne!(misspell(&mut rng, &n), n);
        }
        assert_eq!(taken.len(), 200);
    }
}
