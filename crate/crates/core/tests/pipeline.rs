mod common;

use std::collections::HashMap;

use salient_core::analytics::{aggregate_preferences, dataset_stats, fleiss_kappa, CountMatrix, GroupBy};
use salient_core::corpus::{load_corpus, load_preferences, load_salience_annotations, Conversation};
use salient_core::dialogue::{run_script, Outcome};
use salient_core::kb::{Definition, DefinitionSource, KnowledgeBase};
use salient_core::linker::SurfaceFormDictionary;
use salient_core::pipeline::{AnswerSource, ChatReply, ChatSession, LinkerBackend, Pipeline, PipelineOptions, RewriteStatus};
use salient_core::rewriter::{RewriteConfig, Strategy};
use salient_core::salience::SpecialCase;

use common::{fixture, fixture_kb, golden_rewrites};

fn corpus() -> Vec<Conversation> {
    load_corpus(&fixture("corpus.jsonl")).unwrap()
}

fn pipeline_with(kb: KnowledgeBase, options: PipelineOptions) -> Pipeline {
    let dict = SurfaceFormDictionary::load(&fixture("dictionary.tsv")).unwrap();
    Pipeline::new(LinkerBackend::Local(dict), kb, options)
}

fn pipeline() -> Pipeline {
    pipeline_with(fixture_kb(), PipelineOptions::default())
}

fn turn<'a>(convs: &'a [Conversation], id: &str, index: u32) -> (&'a str, &'a str) {
    let t = convs
        .iter()
        .find(|c| c.conversation_id == id)
        .and_then(|c| c.turns.iter().find(|t| t.turn_index == index))
        .unwrap();
    (&t.question, &t.answer)
}

#[test]
fn golden_rewrites_reproduced() {
    for g in golden_rewrites() {
        assert_eq!(g.actual, g.expected, "{}", g.name);
    }
}

#[test]
fn fixture_corpus_links_as_hand_annotated() {
    let p = pipeline();
    let convs = corpus();
    // (surface, entity, start, end) per turn, linked by hand
    type Span = (&'static str, &'static str, usize, usize);
    let expected: &[(&str, u32, &[Span])] = &[
        ("hp", 1, &[("Hagrid", "Q174009", 0, 6), ("Diagon Alley", "Q1207988", 71, 83)]),
        ("hp", 2, &[("Rubeus Hagrid", "Q174009", 0, 13), ("Diagon Alley", "Q1207988", 29, 41)]),
        ("hp", 3, &[]),
        ("myth", 1, &[]),
        (
            "myth",
            2,
            &[
                ("James C. Kaufman", "Q6133318", 0, 16),
                ("Beghetto", "Q96381", 21, 29),
                ("four C model of creativity", "Q5179215", 43, 69),
            ],
        ),
        ("myth", 3, &[("four C model of creativity", "Q5179215", 4, 30)]),
        (
            "sci",
            1,
            &[("lipid molecules", "Q11254", 65, 80), ("barrier", "Q210726", 137, 144), ("cells", "Q7868", 156, 161)],
        ),
        ("sci", 2, &[("Hannibal", "Q8456", 0, 8), ("African", "Q15", 97, 104)]),
        ("sci", 3, &[("Italy", "Q38", 15, 20), ("Hannibal", "Q8456", 22, 30)]),
    ];
    for (id, index, spans) in expected {
        let (q, a) = turn(&convs, id, *index);
        let got: Vec<_> = p
            .link_turn(q, a)
            .unwrap()
            .into_iter()
            .map(|m| (m.surface, m.entity_id, m.start, m.end))
            .collect();
        let want: Vec<_> = spans
            .iter()
            .map(|(s, e, a, b)| (s.to_string(), e.to_string(), *a, *b))
            .collect();
        assert_eq!(got, want, "{id}#{index}");
    }
}

#[test]
fn question_filter_toggles() {
    let convs = corpus();
    let (q, a) = turn(&convs, "hp", 3);
    let off = pipeline_with(
        fixture_kb(),
        PipelineOptions {
            question_filter: salient_core::linker::QuestionFilter::OFF,
            ..PipelineOptions::default()
        },
    );
    let ids: Vec<_> = off.link_turn(q, a).unwrap().into_iter().map(|m| m.entity_id).collect();
    assert_eq!(ids, ["Q7561", "Q40867"]);
    assert!(pipeline().link_turn(q, a).unwrap().is_empty());
}

#[test]
fn special_cases_in_fixture() {
    let p = pipeline();
    let convs = corpus();
    let (q, a) = turn(&convs, "sci", 2);
    let ms = p.link_turn(q, a).unwrap();
    let scored = p.score_turn(q, a, &ms, &[], None).unwrap();
    let cases: Vec<_> = scored.iter().map(|s| (s.mention.entity_id.as_str(), s.special_case)).collect();
    assert_eq!(cases, [("Q8456", SpecialCase::EntityIsAnswer), ("Q15", SpecialCase::LocationOrNe)]);

    let r = p.rewrite_scored(a, &scored, Strategy::FollowupOffer).unwrap();
    assert_eq!(r.status, RewriteStatus::NoTargets);
    assert_eq!(r.result.rewritten, a);
    assert!(r.result.insertions.is_empty());
}

#[test]
fn gold_scores_order_followup_list() {
    let p = pipeline();
    let convs = corpus();
    let (q, a) = turn(&convs, "sci", 1);
    let gold: HashMap<String, f64> = [("Q11254", 1.8), ("Q7868", 1.4), ("Q210726", 0.6)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let r = p.rewrite_turn(q, a, &[], None, Some(&gold), Strategy::FollowupQuestion).unwrap();
    assert_eq!(
        r.result.rewritten,
        format!("{a} Would you like to learn more about Lipid, Cell (biology), or Activation energy?")
    );
    let r = p.rewrite_turn(q, a, &[], None, Some(&gold), Strategy::InlineNatural).unwrap();
    assert_eq!(
        r.result.rewritten,
        "The lipid bilayer is a thin polar membrane made of two layers of lipid molecules, a class of nonpolar substances of either biological or artificial origin. These membranes are flat sheets that form a continuous barrier, an energy that must be input to a system to undergo a process, around all cells, a basic structural and functional unit of all organisms."
    );
}

#[test]
fn missing_definitions_reported_per_entity() {
    let kb = KnowledgeBase::from_definitions([Definition::new(
        "Q7868",
        "Cell (biology)",
        "basic structural and functional unit of all organisms",
        DefinitionSource::Snapshot,
    )]);
    let p = pipeline_with(kb, PipelineOptions::default());
    let convs = corpus();
    let (q, a) = turn(&convs, "sci", 1);
    let r = p.rewrite_turn(q, a, &[], None, None, Strategy::InlineWiki).unwrap();
    assert_eq!(r.status, RewriteStatus::Ok);
    let mut missing = r.missing_definitions.clone();
    missing.sort();
    assert_eq!(missing, ["Q11254", "Q210726"]);
    assert_eq!(r.result.targets.len(), 1);
    assert_eq!(r.result.reconstruct(), a);
}

#[test]
fn main_text_preset_and_top_n() {
    let p = pipeline_with(
        fixture_kb(),
        PipelineOptions {
            top_n: 1,
            rewrite: RewriteConfig {
                templates: salient_core::rewriter::FollowupTemplates::main_text(),
                ..RewriteConfig::default()
            },
            ..PipelineOptions::default()
        },
    );
    let convs = corpus();
    let (q, a) = turn(&convs, "myth", 2);
    let r = p.rewrite_turn(q, a, &[], None, None, Strategy::FollowupOffer).unwrap();
    assert_eq!(r.result.targets.len(), 1);
    assert!(r.result.rewritten.ends_with(", feel free to ask."), "{}", r.result.rewritten);
    assert!(r.result.rewritten.contains("If you wish to learn more about "));
}

#[test]
fn preference_tables_reproduce_reference_counts() {
    let recs = load_preferences(&fixture("preferences.jsonl")).unwrap();
    assert_eq!(recs.len(), 621);
    let by_subtype = aggregate_preferences(&recs, GroupBy::Subtype);
    let rows: Vec<_> = by_subtype.rows.iter().map(|r| (r.condition.as_str(), r.counts())).collect();
    assert_eq!(
        rows,
        [
            ("wiki/offer", [60, 66, 45]),
            ("wiki/question", [56, 53, 41]),
            ("natural/offer", [54, 60, 36]),
            ("natural/question", [52, 71, 27]),
        ]
    );
    assert_eq!(by_subtype.total.counts(), [222, 250, 149]);
    let by_n = aggregate_preferences(&recs, GroupBy::TopN);
    let rows: Vec<_> = by_n.rows.iter().map(|r| (r.top_n, r.counts())).collect();
    assert_eq!(rows, [(Some(1), [80, 84, 65]), (Some(2), [87, 83, 42]), (Some(3), [55, 83, 42])]);
    assert_eq!(by_n.total, by_subtype.total);
}

#[test]
fn salience_fixture_statistics() {
    let anns = load_salience_annotations(&fixture("salience.jsonl")).unwrap();
    let s = dataset_stats(&anns).unwrap();
    assert_eq!((s.answers, s.entities), (4, 10));
    // entities per answer 3, 1, 3, 3
    assert!((s.entities_per_answer.mean - 2.5).abs() < 1e-12);
    assert!((s.entities_per_answer.std - 0.75f64.sqrt()).abs() < 1e-12);
    // 50 labels: 5 zeros, 20 ones, 25 twos
    assert!((s.label_share[0] - 5.0 / 50.0).abs() < 1e-12);
    assert!((s.label_share[1] - 20.0 / 50.0).abs() < 1e-12);
    assert!((s.label_share[2] - 25.0 / 50.0).abs() < 1e-12);

    let perfect = load_salience_annotations(&fixture("salience_perfect.jsonl")).unwrap();
    assert_eq!(fleiss_kappa(&CountMatrix::from_annotations(&perfect).unwrap()).unwrap(), 1.0);
}

#[test]
fn dialogue_script_outcomes() {
    let script = std::fs::read_to_string(fixture("dialogue_script.jsonl")).unwrap();
    let steps = run_script(&script, &RewriteConfig::default()).unwrap();
    assert_eq!(steps.len(), 5);
    for s in &steps {
        assert!(s.passed, "line {}: {:?}", s.line_no, s.actual);
    }
    match &steps[1].actual {
        Outcome::Define { response, .. } => assert_eq!(response, "Sisyphus: king of Ephyra in Greek mythology."),
        other => panic!("{other:?}"),
    }
    assert_eq!(run_script(&script, &RewriteConfig::default()).unwrap(), steps);
}

#[test]
fn chat_session_accepts_and_moves_on() {
    let p = pipeline();
    let convs = corpus();
    let mut chat = ChatSession::new(&p, Strategy::FollowupQuestion, AnswerSource::from_corpus(&convs));
    let reply = chat.handle("tell me about models of CREATIVITY").unwrap();
    assert!(reply.text().starts_with("James C. Kaufman and Beghetto"));
    assert!(chat.pending_offer().is_some());
    match chat.handle("what about james c. kaufman?").unwrap() {
        ChatReply::Definition { entity_id, text } => {
            assert_eq!(entity_id, "Q6133318");
            assert_eq!(text, "James C. Kaufman: American psychologist.");
        }
        other => panic!("{other:?}"),
    }
    assert!(chat.pending_offer().is_none());

    chat.handle("Tell me about models of creativity.").unwrap();
    // ignoring the offer treats the line as a new question
    let reply = chat.handle("how many levels does it have?").unwrap();
    assert!(reply.text().starts_with("The four C model of creativity has four levels"));
    assert!(matches!(chat.handle("something unknown").unwrap(), ChatReply::Answer { rewrite: None, .. }));
}
