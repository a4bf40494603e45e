#[path = "common/oracles.rs"]
mod oracles;

use markfeed::agreement::{krippendorff_alpha, Level, RatingMatrix};
use markfeed::corpus::tokenize;
use markfeed::metrics::{bleu, ter_stats};
use oracles::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<&'static str>, Vec<&'static str>) {
    const WORDS: [&str; 4] = ["a", "b", "c", "d"];
    let h = rng.random_range(0..=8);
    let r = rng.random_range(1..=8);
    let mut pick = |n| {
        (0..n)
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
    };
    (pick(h), pick(r))
}

#[test]
fn ter_matches_greedy_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (h, r) = random_pair(&mut rng);
        let st = ter_stats(&h, &r);
        assert_eq!(
            (st.edits, st.shifts),
            ter_greedy_oracle(&h, &r),
            "{h:?} vs {r:?}"
        );
    }
}

#[test]
fn ter_is_bounded_by_exhaustive_search_and_plain_edit_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..60 {
        let (h, r) = random_pair(&mut rng);
        let st = ter_stats(&h, &r);
        let total = st.edits + st.shifts;
        assert!(total <= edit_distance(&h, &r));
        if st.shifts <= 1 {
            assert!(ter_exhaustive_min(&h, &r, 1) <= total);
        }
    }
}

#[test]
fn bleu_hand_computed_cases() {
    for (h, r, expected) in bleu_hand_cases() {
        let hs: Vec<Vec<&str>> = h.iter().map(|s| s.split(' ').collect()).collect();
        let rs: Vec<Vec<&str>> = r.iter().map(|s| s.split(' ').collect()).collect();
        let got = bleu(&hs, &rs).unwrap();
        assert!((got - expected).abs() < 1e-6, "{h:?}: {got} vs {expected}");
    }
    let same = vec![vec!["x", "y", "z", "w", "v"], vec!["q"]];
    assert!((bleu(&same, &same).unwrap() - 100.0).abs() < 1e-9);
}

fn matrix(values: Vec<Vec<Option<f64>>>, level: Level) -> RatingMatrix {
    let units = (0..values.len()).map(|i| format!("u{i}")).collect();
    let raters = (0..values[0].len()).map(|i| format!("r{i}")).collect();
    RatingMatrix::new(units, raters, values, level).unwrap()
}

#[test]
fn alpha_hand_matrices() {
    // nominal: counts a=3, b=5; one disagreeing unit; D_o = 2/8,
    // D_e = 2*3*5/(8*7), alpha = 1 - 14/30
    let m1 = vec![
        vec![Some(0.0), Some(0.0)],
        vec![Some(0.0), Some(1.0)],
        vec![Some(1.0), Some(1.0)],
        vec![Some(1.0), Some(1.0)],
    ];
    let a1 = krippendorff_alpha(&matrix(m1.clone(), Level::Nominal)).unwrap();
    assert!((a1 - 16.0 / 30.0).abs() < 1e-10);
    assert!((a1 - alpha_coincidence(&m1, true)).abs() < 1e-10);

    // interval with missing values and a unit with one rating
    let m2 = vec![
        vec![Some(1.0), Some(2.0), Some(3.0)],
        vec![Some(2.0), Some(2.0), None],
        vec![Some(3.0), Some(4.0), Some(5.0)],
        vec![None, Some(4.0), None],
    ];
    let a2 = krippendorff_alpha(&matrix(m2.clone(), Level::Interval)).unwrap();
    assert!((a2 - alpha_coincidence(&m2, false)).abs() < 1e-10);

    // interval, non-integer values, four raters
    let m3 = vec![
        vec![Some(0.1), Some(0.2), Some(0.15), Some(0.4)],
        vec![Some(0.9), Some(0.7), Some(0.8), None],
        vec![Some(0.5), None, Some(0.45), Some(0.6)],
    ];
    let a3 = krippendorff_alpha(&matrix(m3.clone(), Level::Interval)).unwrap();
    assert!((a3 - alpha_coincidence(&m3, false)).abs() < 1e-10);

    let perfect = vec![vec![Some(1.0), Some(1.0)], vec![Some(3.0), Some(3.0)]];
    assert_eq!(
        krippendorff_alpha(&matrix(perfect, Level::Interval)).unwrap(),
        1.0
    );
}

#[test]
fn alpha_near_zero_for_independent_ratings() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<Vec<Option<f64>>> = (0..200)
        .map(|_| (0..3).map(|_| Some(rng.random::<f64>())).collect())
        .collect();
    let a = krippendorff_alpha(&matrix(values, Level::Interval)).unwrap();
    assert!(a.abs() < 0.15, "{a}");
}

fn ratings() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
    (2usize..5).prop_flat_map(|raters| {
        prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.85, -50.0f64..50.0), raters),
            3..12,
        )
    })
}

fn defined(values: &[Vec<Option<f64>>]) -> bool {
    let pairable: Vec<f64> = values
        .iter()
        .filter(|r| r.iter().flatten().count() >= 2)
        .flat_map(|r| r.iter().flatten().copied())
        .collect();
    pairable.len() >= 2 && pairable.iter().any(|v| (v - pairable[0]).abs() > 1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tokenizer_matches_regex_oracle(text in "[a-z0-9 .,!?'\"()„“«»…-]{0,40}") {
        prop_assert_eq!(tokenize(&text), tokenize_oracle(&text));
    }

    #[test]
    fn alpha_matches_coincidence_form(values in ratings()) {
        prop_assume!(defined(&values));
        let a = krippendorff_alpha(&matrix(values.clone(), Level::Interval)).unwrap();
        prop_assert!((a - alpha_coincidence(&values, false)).abs() < 1e-9);
    }

    #[test]
    fn alpha_invariant_under_affine_maps(values in ratings(), scale in 0.1f64..10.0, shift in -100.0f64..100.0, flip in any::<bool>()) {
        prop_assume!(defined(&values));
        let s = if flip { -scale } else { scale };
        let mapped: Vec<Vec<Option<f64>>> = values
            .iter()
            .map(|r| r.iter().map(|v| v.map(|x| s * x + shift)).collect())
            .collect();
        let a = krippendorff_alpha(&matrix(values, Level::Interval)).unwrap();
        let b = krippendorff_alpha(&matrix(mapped, Level::Interval)).unwrap();
        prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
    }

    #[test]
    fn alpha_invariant_under_unit_and_rater_order(values in ratings(), seed in any::<u64>()) {
        prop_assume!(defined(&values));
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..values[0].len()).collect();
        perm.shuffle(&mut rng);
        let mut shuffled: Vec<Vec<Option<f64>>> =
            values.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        shuffled.shuffle(&mut rng);
        let a = krippendorff_alpha(&matrix(values, Level::Interval)).unwrap();
        let b = krippendorff_alpha(&matrix(shuffled, Level::Interval)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ter_never_exceeds_plain_edit_distance(h in prop::collection::vec(0u8..4, 0..9), r in prop::collection::vec(0u8..4, 1..9)) {
        let hs: Vec<String> = h.iter().map(|v| v.to_string()).collect();
        let rs: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let hv: Vec<&str> = hs.iter().map(String::as_str).collect();
        let rv: Vec<&str> = rs.iter().map(String::as_str).collect();
        let st = ter_stats(&hv, &rv);
        prop_assert!(st.edits + st.shifts <= edit_distance(&hv, &rv));
        prop_assert!(st.score() <= hv.len().max(rv.len()) as f64 / rv.len() as f64 + 1e-12);
    }
}
