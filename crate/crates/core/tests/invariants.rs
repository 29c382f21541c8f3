use proptest::prelude::*;

use num_rational::Ratio;
use stylerank::backend::extract_completion;
use stylerank::metrics::align::align_slots;
use stylerank::metrics::bleu::sentence_bleu;
use stylerank::metrics::lexicon::ValueLexicon;
use stylerank::metrics::pearson::pearson;
use stylerank::metrics::similarity::TokenF1Scorer;
use stylerank::mr::{parse_mr, serialize_mr, Domain, Personality};
use stylerank::prompts::select_diverse_indices;
use stylerank::ranking::{rank, CandidateScore, RankingFunction};
use stylerank::style::{LocalStyleScorer, StyleDistribution};

fn personality() -> impl Strategy<Value = Personality> {
    prop::sample::select(Personality::ALL.to_vec())
}

fn personage_mr() -> impl Strategy<Value = String> {
    let optional = |key: &'static str, values: Vec<&'static str>| {
        prop::option::of(prop::sample::select(values)).prop_map(move |v| v.map(|v| format!("{key} = {v}")))
    };
    (
        optional("eattype", vec!["pub", "restaurant", "coffee shop"]),
        optional("food", vec!["English", "Italian", "Fast food", "Chinese"]),
        optional("pricerange", vec!["cheap", "moderate", "high", "less than £20"]),
        optional("customerrating", vec!["low", "average", "high", "5 out of 5"]),
        optional("area", vec!["city centre", "riverside"]),
        optional("familyfriendly", vec!["yes", "no"]),
        optional("near", vec!["nearVariable"]),
        prop::option::of(personality()),
    )
        .prop_map(|(a, b, c, d, e, f, g, p)| {
            let mut parts = vec!["name = nameVariable".to_string()];
            parts.extend([a, b, c, d, e, f, g].into_iter().flatten());
            if let Some(p) = p {
                parts.push(format!("personality = {p}"));
            }
            parts.join(" | ")
        })
}

fn viggo_mr() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["inform", "give_opinion", "verify_attribute", "request"]),
        prop::sample::select(vec!["SpellForce 3", "F1 2014", "Little Big Adventure", "Guitar Hero: Smash Hits"]),
        prop::option::of(prop::sample::select(vec!["poor", "average", "good", "excellent"])),
        prop::sample::subsequence(vec!["action", "driving/racing", "shooter", "simulation", "sport"], 0..=3),
        prop::option::of(prop::sample::select(vec!["yes", "no"])),
        prop::option::of(personality()),
    )
        .prop_map(|(act, name, rating, genres, multi, p)| {
            let mut slots = vec![format!("name [{name}]")];
            if let Some(r) = rating {
                slots.push(format!("rating [{r}]"));
            }
            if !genres.is_empty() {
                slots.push(format!("genres [{}]", genres.join(", ")));
            }
            if let Some(m) = multi {
                slots.push(format!("has_multiplayer [{m}]"));
            }
            let mut out = format!("{act}({})", slots.join(", "));
            if let Some(p) = p {
                out.push_str(&format!(" | personality = {p}"));
            }
            out
        })
}

/// Words mixing lexicon phrases with filler, so alignments see every verdict.
fn utterance() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec![
            "nameVariable", "nearVariable", "pub", "restaurant", "cheap", "expensive", "italian", "english",
            "riverside", "city centre", "kid friendly", "isn't family friendly", "average rating", "five stars",
            "poor", "multiplayer", "single-player", "shooter", "F1 2014", "is", "a", "and", "also", "you know",
        ]),
        0..20,
    )
    .prop_map(|w| w.join(" "))
}

fn score_strategy() -> impl Strategy<Value = CandidateScore> {
    (-0.5f64..1.0, 1e-4f64..1.0, 1e-6f64..1.0, 0.0f64..=1.0, 0.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0).prop_map(
        |(sacc, pac, flu, pbleu, pbb, pbl, pbe)| CandidateScore {
            prompt_id: "p".into(),
            generation_index: 0,
            text: String::new(),
            target: Personality::Agreeable,
            slot_errors: 0,
            slot_count: 1,
            sacc,
            pac_prob: pac,
            predicted: Personality::Agreeable,
            fluency: flu,
            pbleu: Some(pbleu),
            pbbleu: Some(pbb),
            pbleurt: Some(pbl),
            pbert: Some(pbe),
        },
    )
}

proptest! {
    #[test]
    fn personage_mrs_round_trip(text in personage_mr()) {
        let mr = parse_mr(&text).unwrap();
        let again = parse_mr(&serialize_mr(&mr, mr.domain().native_format()).unwrap()).unwrap();
        prop_assert_eq!(mr, again);
    }

    #[test]
    fn viggo_mrs_round_trip(text in viggo_mr()) {
        let mr = parse_mr(&text).unwrap();
        prop_assert_eq!(mr.domain(), Domain::VideoGame);
        let again = parse_mr(&serialize_mr(&mr, mr.domain().native_format()).unwrap()).unwrap();
        prop_assert_eq!(mr, again);
    }

    #[test]
    fn extraction_is_idempotent(raw in "[a }\\\\\n]{0,40}", stops in prop::sample::subsequence(vec!["}", "\n\n", "}}"], 0..=3)) {
        let stops: Vec<String> = stops.into_iter().map(str::to_string).collect();
        let once = extract_completion(&raw, &stops);
        prop_assert_eq!(extract_completion(&once, &stops), once.clone());
        prop_assert!(raw.trim().starts_with(once.as_str()) || once.is_empty());
    }

    #[test]
    fn sacc_and_ser_sum_to_one(mr_text in personage_mr(), text in utterance()) {
        let mr = parse_mr(&mr_text).unwrap();
        let a = align_slots(&text, &mr, &ValueLexicon::builtin(Domain::Restaurant)).unwrap();
        prop_assert_eq!(a.ser().unwrap() + a.sacc().unwrap(), Ratio::from_integer(1));
        prop_assert_eq!(a.slot_count as usize, mr.slot_count());
        // a slot is substituted or deleted, never both
        prop_assert!(a.substitutions + a.deletions <= a.slot_count);
    }

    #[test]
    fn viggo_alignment_counts_are_bounded(mr_text in viggo_mr(), text in utterance()) {
        let mr = parse_mr(&mr_text).unwrap();
        let a = align_slots(&text, &mr, &ValueLexicon::builtin(Domain::VideoGame)).unwrap();
        prop_assert!(a.substitutions + a.deletions <= a.slot_count);
        prop_assert_eq!(a.ser().unwrap() + a.sacc().unwrap(), Ratio::from_integer(1));
    }

    #[test]
    fn pearson_is_affine_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 3..30),
        noise in prop::collection::vec(-10.0f64..10.0, 30),
        a in 0.1f64..10.0, b in -50.0f64..50.0, c in 0.1f64..10.0, d in -50.0f64..50.0,
    ) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| 0.5 * x + n).collect();
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        let xt: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let yt: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
        let rt = pearson(&xt, &yt).unwrap();
        prop_assert!((r - rt).abs() < 1e-9, "{} vs {}", r, rt);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn rf2_never_exceeds_rf1(score in score_strategy()) {
        let rf1 = RankingFunction::Rf1.value(&score).unwrap();
        let rf2 = RankingFunction::Rf2.value(&score).unwrap();
        prop_assert!(rf2 <= rf1);
        prop_assert!(rf1 >= 0.0);
    }

    #[test]
    fn ranking_argmax_survives_scaling_pac(
        pool in prop::collection::vec(score_strategy(), 1..12),
        factor in 0.01f64..100.0,
    ) {
        let pool: Vec<CandidateScore> = pool
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| { s.generation_index = i; s })
            .collect();
        for rf in &RankingFunction::PUBLISHED {
            let best = rank(&pool, rf).unwrap()[0].score.generation_index;
            let scaled: Vec<CandidateScore> = pool
                .iter()
                .cloned()
                .map(|mut s| { s.pac_prob *= factor; s })
                .collect();
            prop_assert_eq!(rank(&scaled, rf).unwrap()[0].score.generation_index, best);
        }
    }

    #[test]
    fn ranks_are_a_permutation(pool in prop::collection::vec(score_strategy(), 1..12)) {
        let pool: Vec<CandidateScore> = pool
            .into_iter()
            .enumerate()
            .map(|(i, mut s)| { s.generation_index = i; s })
            .collect();
        let ranked = rank(&pool, &RankingFunction::Rf1).unwrap();
        let mut idx: Vec<usize> = ranked.iter().map(|r| r.score.generation_index).collect();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..pool.len()).collect::<Vec<_>>());
        prop_assert!(ranked.windows(2).all(|w| w[0].value >= w[1].value));
    }

    #[test]
    fn style_distributions_sum_to_one(text in utterance()) {
        let d = LocalStyleScorer::default().classify(&format!("{text} ok")).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.probs().iter().all(|p| *p > 0.0));
    }

    #[test]
    fn more_evidence_never_lowers_probability(
        evidence in prop::array::uniform5(-5.0f64..5.0),
        which in 0usize..5,
        bump in 0.0f64..5.0,
        temperature in 0.2f64..5.0,
    ) {
        let before = StyleDistribution::from_evidence(evidence, temperature);
        let mut more = evidence;
        more[which] += bump;
        let after = StyleDistribution::from_evidence(more, temperature);
        let p = Personality::ALL[which];
        prop_assert!(after.prob(p) >= before.prob(p) - 1e-15);
    }

    #[test]
    fn diverse_selection_is_distinct_and_seeded(
        texts in prop::collection::vec("[a-d ]{1,12}", 1..10),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= texts.len());
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let a = select_diverse_indices(&refs, k, &TokenF1Scorer, seed).unwrap();
        let b = select_diverse_indices(&refs, k, &TokenF1Scorer, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), k);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
    }

    #[test]
    fn bleu_is_bounded_and_reflexive(words in prop::collection::vec("[a-e]{1,3}", 1..15), other in prop::collection::vec("[a-e]{1,3}", 1..15)) {
        let a = words.join(" ");
        let b = other.join(" ");
        let s = sentence_bleu(&a, &[b.as_str()]).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((sentence_bleu(&a, &[a.as_str()]).unwrap() - 1.0).abs() < 1e-12);
    }
}
