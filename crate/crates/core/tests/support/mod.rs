//! Independent reference implementations and fixtures for integration and
//! acceptance tests. Nothing here calls into the metric code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use roi_core::{BackendSpec, ParallelRecord};

/// Edit distance by direct top-down evaluation of the recurrence, memoized
/// on `(i, j)`.
pub fn recursive_edit_distance<T: PartialEq>(s: &[T], t: &[T]) -> usize {
    fn go<T: PartialEq>(
        s: &[T],
        t: &[T],
        i: usize,
        j: usize,
        memo: &mut Vec<Option<usize>>,
        w: usize,
    ) -> usize {
        if i.min(j) == 0 {
            return i.max(j);
        }
        if let Some(v) = memo[i * w + j] {
            return v;
        }
        let v = if s[i - 1] == t[j - 1] {
            go(s, t, i - 1, j - 1, memo, w)
        } else {
            1 + go(s, t, i - 1, j, memo, w)
                .min(go(s, t, i, j - 1, memo, w))
                .min(go(s, t, i - 1, j - 1, memo, w))
        };
        memo[i * w + j] = Some(v);
        v
    }
    let w = t.len() + 1;
    let mut memo = vec![None; (s.len() + 1) * w];
    go(s, t, s.len(), t.len(), &mut memo, w)
}

/// Every sequence over `alphabet` of length `0..=max_len`.
pub fn all_sequences<'a>(alphabet: &[&'a str], max_len: usize) -> Vec<Vec<&'a str>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for &a in alphabet {
                let mut s = seq.clone();
                s.push(a);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// LCS length by enumerating subsequences of the shorter side, longest
/// first. Exponential; only for short inputs.
pub fn brute_force_lcs(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |needle: &[&str]| {
        let mut it = long.iter();
        needle.iter().all(|x| it.any(|y| y == x))
    };
    let n = short.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&str> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| short[i])
            .collect();
        if is_subseq(&sub) {
            best = k;
        }
    }
    best
}

fn gram_counts(words: &[&str], n: usize) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    if words.len() >= n {
        for start in 0..=words.len() - n {
            *m.entry(words[start..start + n].join("\u{1}")).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with clipped counts, closest-reference brevity penalty and no
/// smoothing. Orders with no candidate n-grams anywhere in the corpus are
/// left out of the geometric mean.
pub fn reference_corpus_bleu(pairs: &[(Vec<&str>, Vec<Vec<&str>>)], max_n: usize) -> f64 {
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let mut c_len = 0u64;
    let mut r_len = 0u64;
    for (cand, refs) in pairs {
        c_len += cand.len() as u64;
        let mut best = refs[0].len();
        for r in refs {
            let (d, bd) = (r.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best as u64;
        for n in 1..=max_n {
            let cc = gram_counts(cand, n);
            for (gram, count) in &cc {
                let ref_max = refs
                    .iter()
                    .map(|r| gram_counts(r, n).get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += (*count).min(ref_max);
                totals[n - 1] += count;
            }
        }
    }
    if c_len == 0 {
        return 0.0;
    }
    let mut product = 1.0f64;
    let mut orders = 0;
    for n in 0..max_n {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return 0.0;
        }
        product *= matches[n] as f64 / totals[n] as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    bp * product.powf(1.0 / orders as f64)
}

/// Tiny deterministic generator so fixtures do not depend on `rand`.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(
            seed.wrapping_mul(2862933555777941757)
                .wrapping_add(3037000493),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Canonical source words, their English translations, and non-canonical
/// synonyms. Together the source side has 20 distinct words.
pub const CANONICAL: [&str; 10] = [
    "hund", "katze", "haus", "baum", "auto", "buch", "tisch", "stuhl", "ball", "brot",
];
pub const ENGLISH: [&str; 10] = [
    "dog", "cat", "house", "tree", "car", "book", "table", "chair", "ball", "bread",
];
pub const SYNONYMS: [&str; 10] = [
    "köter", "mieze", "gebäude", "gehölz", "wagen", "band", "tafel", "sessel", "kugel", "laib",
];

/// A record of the toy corpus plus the number of non-canonical words in it.
pub struct ToyRecord {
    pub record: ParallelRecord,
    pub synonyms: usize,
    pub len: usize,
}

pub fn toy_corpus(n: usize, seed: u64) -> Vec<ToyRecord> {
    let mut rng = Lcg::new(seed);
    (0..n)
        .map(|i| {
            let len = 3 + rng.below(4);
            let mut src = Vec::with_capacity(len);
            let mut tgt = Vec::with_capacity(len);
            let mut synonyms = 0;
            let noisy = rng.below(2) == 0;
            for _ in 0..len {
                let w = rng.below(CANONICAL.len());
                if noisy && rng.below(2) == 0 {
                    src.push(SYNONYMS[w]);
                    synonyms += 1;
                } else {
                    src.push(CANONICAL[w]);
                }
                tgt.push(ENGLISH[w]);
            }
            ToyRecord {
                record: ParallelRecord::new(format!("toy-{i:04}"), src.join(" "), tgt.join(" ")),
                synonyms,
                len,
            }
        })
        .collect()
}

/// Maps each synonym to its canonical word.
pub fn canonicalizer() -> BackendSpec {
    let pairs: Vec<(&str, &[&str])> = SYNONYMS
        .iter()
        .zip(CANONICAL.iter())
        .map(|(s, c)| (*s, std::slice::from_ref(c)))
        .collect();
    BackendSpec::rules(&pairs, 0)
}

/// Translates canonical words and leaves everything else untouched.
pub fn canonical_translator() -> BackendSpec {
    let pairs: Vec<(&str, &[&str])> = CANONICAL
        .iter()
        .zip(ENGLISH.iter())
        .map(|(c, e)| (*c, std::slice::from_ref(e)))
        .collect();
    BackendSpec::rules(&pairs, 0)
}
