use std::collections::HashSet;

/// Vowel-group syllable estimate: maximal runs of `aeiouy`, at least one.
pub fn syllables(word: &str) -> usize {
    let mut groups = 0;
    let mut in_group = false;
    for c in word.chars().flat_map(char::to_lowercase) {
        let vowel = matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
        if vowel && !in_group {
            groups += 1;
        }
        in_group = vowel;
    }
    groups.max(1)
}

pub fn is_complex(word: &str) -> bool {
    syllables(word) >= 3
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadabilityFeatures {
    pub cpw: f64,
    pub spw: f64,
    pub wps: f64,
    pub cwps: f64,
    pub cwr: f64,
    pub dale_chall: f64,
}

impl ReadabilityFeatures {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("cpw", self.cpw),
            ("spw", self.spw),
            ("wps", self.wps),
            ("cwps", self.cwps),
            ("cwr", self.cwr),
            ("dale_chall", self.dale_chall),
        ]
    }
}

/// Readability of an answer. A word is "difficult" for Dale–Chall when it
/// is missing from `easy_words`, or, without a list, when it is complex.
pub fn readability_features<S: AsRef<str>>(
    tokens: &[S],
    sentences: usize,
    easy_words: Option<&HashSet<String>>,
) -> ReadabilityFeatures {
    let words = tokens.len().max(1) as f64;
    let sentences = sentences.max(1) as f64;
    let chars: usize = tokens.iter().map(|t| t.as_ref().chars().count()).sum();
    let syl: usize = tokens.iter().map(|t| syllables(t.as_ref())).sum();
    let complex = tokens.iter().filter(|t| is_complex(t.as_ref())).count() as f64;
    let difficult = match easy_words {
        Some(list) => tokens.iter().filter(|t| !list.contains(t.as_ref())).count() as f64,
        None => complex,
    };
    let pct = 100.0 * difficult / words;
    let wps = words / sentences;
    let mut dale_chall = 0.1579 * pct + 0.0496 * wps;
    if pct > 5.0 {
        dale_chall += 3.6365;
    }
    ReadabilityFeatures {
        cpw: chars as f64 / words,
        spw: syl as f64 / words,
        wps,
        cwps: complex / sentences,
        cwr: complex / words,
        dale_chall,
    }
}

/// Total characters over tokens.
pub fn char_length<S: AsRef<str>>(tokens: &[S]) -> f64 {
    tokens.iter().map(|t| t.as_ref().chars().count()).sum::<usize>() as f64
}
