//! Reference implementations used to cross-check the library. Written for
//! clarity over speed and sharing no code with it.
#![allow(dead_code)]

use std::collections::BTreeMap;

use regex::Regex;

/// Plain Wagner-Fischer edit distance with unit costs.
pub fn edit_distance(a: &[&str], b: &[&str]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

fn contains_block(haystack: &[&str], block: &[&str]) -> bool {
    (0..haystack.len()).any(|i| haystack[i..].starts_with(block))
}

fn moved<'a>(hyp: &[&'a str], start: usize, len: usize, dest: usize) -> Vec<&'a str> {
    let mut v = hyp.to_vec();
    let block: Vec<&str> = v.drain(start..start + len).collect();
    v.splice(dest..dest, block);
    v
}

/// Every shift of a block of at most 10 tokens that occurs in the reference,
/// moved at most 50 positions.
fn candidate_shifts(hyp: &[&str], reference: &[&str]) -> Vec<(usize, usize, usize)> {
    let n = hyp.len();
    let mut out = Vec::new();
    for len in 1..=n.min(10) {
        for start in 0..=n - len {
            if !contains_block(reference, &hyp[start..start + len]) {
                continue;
            }
            for dest in 0..=n - len {
                if dest != start && (dest as i64 - start as i64).abs() <= 50 {
                    out.push((start, len, dest));
                }
            }
        }
    }
    out
}

/// Greedy TER by exhaustive enumeration of the shifts available in each
/// round: the largest distance reduction wins; ties go to the longer block,
/// then the earlier start, then the earlier destination.
/// Returns (edits, shifts).
pub fn ter_greedy_oracle(hyp: &[&str], reference: &[&str]) -> (usize, usize) {
    let mut cur = hyp.to_vec();
    let mut dist = edit_distance(&cur, reference);
    let mut shifts = 0;
    loop {
        let mut best: Option<(usize, usize, usize, usize)> = None; // gain, len, start, dest
        for (start, len, dest) in candidate_shifts(&cur, reference) {
            let d = edit_distance(&moved(&cur, start, len, dest), reference);
            if d >= dist {
                continue;
            }
            let gain = dist - d;
            let wins = match best {
                None => true,
                Some((g, l, s, t)) => {
                    gain > g
                        || (gain == g
                            && (len > l || (len == l && (start < s || (start == s && dest < t)))))
                }
            };
            if wins {
                best = Some((gain, len, start, dest));
            }
        }
        match best {
            Some((gain, len, start, dest)) => {
                cur = moved(&cur, start, len, dest);
                dist -= gain;
                shifts += 1;
            }
            None => return (dist, shifts),
        }
    }
}

/// Minimum of shifts + edit distance over all sequences of up to `depth`
/// shifts; a lower bound on any greedy search of that depth.
pub fn ter_exhaustive_min(hyp: &[&str], reference: &[&str], depth: usize) -> usize {
    let mut best = edit_distance(hyp, reference);
    if depth > 0 {
        for (start, len, dest) in candidate_shifts(hyp, reference) {
            let sub = ter_exhaustive_min(&moved(hyp, start, len, dest), reference, depth - 1);
            best = best.min(1 + sub);
        }
    }
    best
}

/// Krippendorff's alpha from the coincidence matrix, as in the textbook
/// definition. `values[unit][rater]`.
pub fn alpha_coincidence(values: &[Vec<Option<f64>>], nominal: bool) -> f64 {
    let delta = |a: f64, b: f64| -> f64 {
        if nominal {
            if a == b {
                0.0
            } else {
                1.0
            }
        } else {
            (a - b) * (a - b)
        }
    };
    // coincidences keyed by the bit patterns of the two values
    let mut o: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut value_of: BTreeMap<u64, f64> = BTreeMap::new();
    for row in values {
        let vals: Vec<f64> = row.iter().flatten().copied().collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let (a, b) = (vals[i], vals[j]);
                    value_of.insert(a.to_bits(), a);
                    value_of.insert(b.to_bits(), b);
                    *o.entry((a.to_bits(), b.to_bits())).or_insert(0.0) += 1.0 / (m - 1) as f64;
                }
            }
        }
    }
    let mut marg: BTreeMap<u64, f64> = BTreeMap::new();
    for (&(c, _), &v) in &o {
        *marg.entry(c).or_insert(0.0) += v;
    }
    let n: f64 = marg.values().sum();
    let mut d_o = 0.0;
    for (&(c, k), &v) in &o {
        d_o += v * delta(value_of[&c], value_of[&k]);
    }
    d_o /= n;
    let mut d_e = 0.0;
    for (&c, &nc) in &marg {
        for (&k, &nk) in &marg {
            d_e += nc * nk * delta(value_of[&c], value_of[&k]);
        }
    }
    d_e /= n * (n - 1.0);
    1.0 - d_o / d_e
}

/// Tokenization by regular expression: each whitespace-separated word is
/// split into leading punctuation, a core and trailing punctuation.
pub fn tokenize_oracle(text: &str) -> Vec<String> {
    let p = r#"[!-/:-@\[-`{-~„“”‚‘’«»–—…¿¡]"#;
    let all_punct = Regex::new(&format!("^{p}+$")).unwrap();
    let parts = Regex::new(&format!("^({p}*)(.*?)({p}*)$")).unwrap();
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if all_punct.is_match(word) {
            out.extend(word.chars().map(String::from));
            continue;
        }
        let c = parts.captures(word).unwrap();
        out.extend(c[1].chars().map(String::from));
        out.push(c[2].to_string());
        out.extend(c[3].chars().map(String::from));
    }
    out
}

/// BLEU cases worked out by hand: (hypotheses, references, expected score).
pub fn bleu_hand_cases() -> Vec<(Vec<&'static str>, Vec<&'static str>, f64)> {
    vec![
        // p = 5/6, 3/5, 2/4, 1/3; equal lengths
        (
            vec!["the cat sat on the mat"],
            vec!["the cat sat on a mat"],
            100.0 * (1.0f64 / 12.0).powf(0.25),
        ),
        // no bigram or longer match: p2..p4 smoothed to 1/4, 1/3, 1/2
        (
            vec!["a b c d"],
            vec!["a c b d"],
            100.0 * (1.0f64 / 24.0).powf(0.25),
        ),
        // pooled over two segments: p = 4/5, 2/3, (0+1)/(1+1), 1;
        // hypothesis 5 tokens against reference 6
        (
            vec!["the cat", "hello world again"],
            vec!["the cat is here", "hello world"],
            100.0 * (-0.2f64).exp() * (4.0f64 / 15.0).powf(0.25),
        ),
    ]
}
