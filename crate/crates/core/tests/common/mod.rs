#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;

use salient_core::kb::{Definition, DefinitionSource, KnowledgeBase};
use salient_core::linker::{EntityMention, SurfaceFormDictionary};
use salient_core::rewriter::Target;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_kb() -> KnowledgeBase {
    KnowledgeBase::load_snapshot(&fixture("kb_snapshot.tsv")).expect("fixture snapshot loads")
}

/// Target for the first occurrence of `surface` in `answer`, defined by the
/// snapshot entry `entity_id`.
pub fn target_from_kb(kb: &KnowledgeBase, answer: &str, surface: &str, entity_id: &str) -> Target {
    let byte = answer.find(surface).unwrap_or_else(|| panic!("{surface:?} not in answer"));
    let start = answer[..byte].chars().count();
    Target {
        mention: EntityMention {
            entity_id: entity_id.into(),
            surface: surface.into(),
            start,
            end: start + surface.chars().count(),
            confidence: 1.0,
        },
        definition: kb.get_definition(entity_id).expect("entity in fixture snapshot"),
        score: 2.0,
    }
}

/// Minimal HTTP/1.1 server answering every request with `handler(path)`.
/// Requested paths (with query) are recorded.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || respond(stream, &*handler, &log));
            }
        });
        Self { url, requests }
    }

    pub fn hits(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn respond(mut stream: TcpStream, handler: &dyn Fn(&str) -> (u16, String), log: &Mutex<Vec<String>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    loop {
        let mut header = String::new();
        match reader.read_line(&mut header) {
            Ok(0) | Err(_) => break,
            Ok(_) if header == "\r\n" => break,
            Ok(_) => {}
        }
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    log.lock().unwrap().push(path.clone());
    let (status, body) = handler(&path);
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

/// URL of a port nothing listens on.
pub fn dead_endpoint() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/annotate")
}

pub const WORDS: &[&str] = &[
    "Hannibal", "crossed", "the", "Alps", "with", "African", "elephants", "lipid", "bilayer", "cells", "Diagon",
    "Alley", "école", "naïve", "war", "of", "Rome",
];

/// A randomized linking and rewriting instance: an answer built from a
/// small vocabulary (so dictionary keys recur and overlap), a dictionary of
/// its n-grams and definitions for every entity.
pub struct Instance {
    pub answer: String,
    pub dict: SurfaceFormDictionary,
    pub kb: KnowledgeBase,
}

pub fn random_instance<R: Rng>(rng: &mut R, max_words: usize) -> Instance {
    let n = rng.gen_range(1..=max_words);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let mut answer = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            answer.push_str(if rng.gen_bool(0.15) { ", " } else { " " });
        }
        answer.push_str(w);
    }
    if rng.gen_bool(0.7) {
        answer.push('.');
    }
    let mut dict = SurfaceFormDictionary::new();
    let mut defs = Vec::new();
    let entries = rng.gen_range(1..=6);
    for e in 0..entries {
        let len = rng.gen_range(1..=3.min(n));
        let at = rng.gen_range(0..=n - len);
        let surface = words[at..at + len].join(" ");
        let id = format!("E{e}");
        // two-decimal commonness so equal values occur
        dict.insert(&surface, id.clone(), rng.gen_range(0..=50) as f64 / 100.0 + 0.2);
        let desc = ["plural things", "large island", "Roman general", "energy that must be input", "the capital"]
            .choose(rng)
            .unwrap();
        defs.push(Definition::new(&id, format!("Label {e}"), *desc, DefinitionSource::Snapshot));
    }
    Instance {
        answer,
        dict,
        kb: KnowledgeBase::from_definitions(defs),
    }
}

pub struct Golden {
    pub name: &'static str,
    pub actual: String,
    pub expected: &'static str,
}

/// Reference example rewrites, rebuilt from the fixture snapshot.
pub fn golden_rewrites() -> Vec<Golden> {
    use salient_core::kb::Definition;
    use salient_core::rewriter::{
        rewrite_followup, rewrite_inline_natural, rewrite_inline_wiki, FollowupVariant, RewriteConfig,
    };

    let kb = fixture_kb();
    let defaults = RewriteConfig::default();
    let no_serial = RewriteConfig {
        serial_comma: false,
        ..RewriteConfig::default()
    };
    let defs = |ids: &[&str]| -> Vec<Definition> { ids.iter().map(|id| kb.get_definition(id).unwrap()).collect() };

    let sisyphus = "Sisyphus was punished for his self-aggrandizing craftiness and deceitfulness.";
    let hannibal = "Hannibal made his famous military exploit of carrying war to Italy by crossing the Alps with his African elephants.";
    let potter = "Hagrid explains that Harry Potter will buy what he needs for school in Diagon Alley.";
    let kaufman = "James C. Kaufman and Beghetto introduced a four C model of creativity.";
    let lipid = "The lipid bilayer is a thin polar membrane made of two layers of lipid molecules. These membranes are flat sheets that form a continuous barrier around all cells.";

    let hagrid = target_from_kb(&kb, potter, "Hagrid", "Q174009");
    let hp = target_from_kb(&kb, potter, "Harry Potter", "Q8337");
    let diagon = target_from_kb(&kb, potter, "Diagon Alley", "Q1207988");

    vec![
        Golden {
            name: "sisyphus inline-natural",
            actual: rewrite_inline_natural(sisyphus, &[target_from_kb(&kb, sisyphus, "Sisyphus", "Q188480")], &defaults)
                .unwrap()
                .rewritten,
            expected: "Sisyphus, who was the king of Ephyra in Greek mythology, was punished for his self-aggrandizing craftiness and deceitfulness.",
        },
        Golden {
            name: "sisyphus followup-question",
            actual: rewrite_followup(sisyphus, &defs(&["Q188480"]), FollowupVariant::Question, &defaults)
                .unwrap()
                .rewritten,
            expected: "Sisyphus was punished for his self-aggrandizing craftiness and deceitfulness. Would you like to learn more about Sisyphus?",
        },
        Golden {
            name: "hannibal followup-offer",
            actual: rewrite_followup(hannibal, &defs(&["Q15", "Q8456"]), FollowupVariant::Offer, &defaults)
                .unwrap()
                .rewritten,
            expected: "Hannibal made his famous military exploit of carrying war to Italy by crossing the Alps with his African elephants. If you would like to learn more about Africa or Hannibal, feel free to ask!",
        },
        Golden {
            name: "harry potter inline-wiki",
            actual: rewrite_inline_wiki(potter, &[hagrid.clone(), hp.clone(), diagon.clone()], &defaults)
                .unwrap()
                .rewritten,
            expected: "Hagrid (fictional character from Harry Potter) explains that Harry Potter (fantasy literature series by J.K. Rowling) will buy what he needs for school in Diagon Alley (places mentioned in Harry Potter).",
        },
        Golden {
            name: "harry potter inline-wiki, Hagrid and Diagon Alley",
            actual: rewrite_inline_wiki(potter, &[hagrid, diagon], &defaults).unwrap().rewritten,
            expected: "Hagrid (fictional character from Harry Potter) explains that Harry Potter will buy what he needs for school in Diagon Alley (places mentioned in Harry Potter).",
        },
        Golden {
            name: "four C model inline-natural",
            actual: rewrite_inline_natural(kaufman, &[target_from_kb(&kb, kaufman, "James C. Kaufman", "Q6133318")], &defaults)
                .unwrap()
                .rewritten,
            expected: "James C. Kaufman, an American psychologist, and Beghetto introduced a four C model of creativity.",
        },
        Golden {
            name: "harry potter followup-offer, no serial comma",
            actual: rewrite_followup(potter, &defs(&["Q8337", "Q174009", "Q1207988"]), FollowupVariant::Offer, &no_serial)
                .unwrap()
                .rewritten,
            expected: "Hagrid explains that Harry Potter will buy what he needs for school in Diagon Alley. If you would like to learn more about Harry Potter, Rubeus Hagrid or places in Harry Potter, feel free to ask!",
        },
        Golden {
            name: "lipid bilayer followup-question, no serial comma",
            actual: rewrite_followup(lipid, &defs(&["Q210726", "Q7868", "Q11254"]), FollowupVariant::Question, &no_serial)
                .unwrap()
                .rewritten,
            expected: "The lipid bilayer is a thin polar membrane made of two layers of lipid molecules. These membranes are flat sheets that form a continuous barrier around all cells. Would you like to learn more about Activation energy, Cell (biology) or Lipid?",
        },
    ]
}
