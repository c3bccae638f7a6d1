//! Regenerates the bundled fixtures under `fixtures/`.
//!
//! ```text
//! cargo run --example generate_fixtures [-- OUT_DIR]
//! ```
//!
//! `synthetic/` is a five-domain corpus whose columns always have the type
//! their relation was trained with, so domain and range filters never drop
//! the true relation. `adversarial/` is built so that a first-candidate
//! answerer poisons co-appearance anchoring. Output is a pure function of
//! this file.

use std::fs;
use std::path::{Path, PathBuf};

use cpa::table::{ColumnRef, GroundTruth, RelationLabel, Table};

#[derive(Clone, Copy)]
enum Kind {
    Person,
    Title,
    Company,
    Place,
    Word(&'static [&'static str]),
    Date(i32),
    Int(u32, u32),
    Decimal(u32, u32),
    Url(&'static str),
}

const FIRST: &[&str] = &[
    "Ada", "Grace", "Alan", "Edsger", "Barbara", "Donald", "Frances", "Ken", "Radia", "Tim", "Sophie", "John",
];
const LAST: &[&str] = &[
    "Lovelace", "Hopper", "Turing", "Dijkstra", "Liskov", "Knuth", "Allen", "Thompson", "Perlman", "Berners",
    "Wilson", "Backus",
];
const NOUN: &[&str] = &[
    "River", "Garden", "Machine", "Winter", "Harbor", "Lantern", "Orchard", "Signal", "Meadow", "Compass",
];
const ADJ: &[&str] = &[
    "Silent", "Golden", "Hidden", "Northern", "Broken", "Quiet", "Crimson", "Distant",
];
const CITY: &[&str] = &[
    "Lisbon", "Oslo", "Kyoto", "Quito", "Dakar", "Perth", "Tallinn", "Cusco", "Hobart",
];
const STREET: &[&str] = &[
    "Main Street",
    "Harbour Road",
    "Elm Avenue",
    "Mill Lane",
    "Station Square",
];

/// Cell `row` of a column of `kind`; `salt` varies values between tables.
fn value(kind: Kind, row: usize, salt: usize) -> String {
    let i = row * 7 + salt * 3;
    match kind {
        Kind::Person => format!("{} {}", FIRST[i % FIRST.len()], LAST[(i / 3 + salt) % LAST.len()]),
        Kind::Title => format!("The {} {}", ADJ[i % ADJ.len()], NOUN[(i / 2 + salt) % NOUN.len()]),
        Kind::Company => format!("{} {} Press", ADJ[(i + 3) % ADJ.len()], NOUN[i % NOUN.len()]),
        Kind::Place => format!(
            "{} {}, {}",
            1 + i % 97,
            STREET[i % STREET.len()],
            CITY[(i / 2) % CITY.len()]
        ),
        Kind::Word(words) => words[i % words.len()].to_string(),
        Kind::Date(base) => format!(
            "{}-{:02}-{:02}",
            base + (i % 40) as i32,
            1 + i % 12,
            1 + (i * 5) % 28
        ),
        Kind::Int(lo, span) => (lo + (i as u32 * 37) % span).to_string(),
        Kind::Decimal(lo, span) => {
            let v = lo + (i as u32 * 13) % span;
            format!("{}.{}", v / 10, v % 10)
        }
        Kind::Url(host) => format!("https://www.{host}/item/{}", 1000 + i),
    }
}

struct Domain {
    name: &'static str,
    relations: &'static [(&'static str, Kind)],
}

const GENRES: &[&str] = &["drama", "comedy", "thriller", "documentary", "animation"];
const FORMATS: &[&str] = &["Hardcover", "Paperback", "EBook", "AudioBook"];
const JOBS: &[&str] = &["engineer", "teacher", "architect", "surgeon", "pilot", "chemist"];
const NATIONS: &[&str] = &["Portuguese", "Norwegian", "Japanese", "Ecuadorian", "Senegalese"];
const CUISINES: &[&str] = &["Thai", "Ethiopian", "Peruvian", "Georgian", "Basque"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const RATINGS: &[&str] = &["G", "PG", "PG-thirteen", "R"];
const VENUES: &[&str] = &["Town Hall", "Riverside Arena", "Old Theatre", "Expo Centre"];

fn synthetic_domains() -> Vec<Domain> {
    vec![
        Domain {
            name: "Book",
            relations: &[
                ("name", Kind::Title),
                ("author", Kind::Person),
                ("datePublished", Kind::Date(1950)),
                ("numberOfPages", Kind::Int(80, 900)),
                ("publisher", Kind::Company),
                ("bookFormat", Kind::Word(FORMATS)),
            ],
        },
        Domain {
            name: "Person",
            relations: &[
                ("name", Kind::Person),
                ("birthDate", Kind::Date(1930)),
                ("jobTitle", Kind::Word(JOBS)),
                ("nationality", Kind::Word(NATIONS)),
                ("height", Kind::Decimal(150, 50)),
            ],
        },
        Domain {
            name: "Restaurant",
            relations: &[
                ("name", Kind::Title),
                ("address", Kind::Place),
                ("servesCuisine", Kind::Word(CUISINES)),
                ("priceRange", Kind::Word(PRICES)),
                ("ratingValue", Kind::Decimal(10, 40)),
                ("url", Kind::Url("eat.example.com")),
            ],
        },
        Domain {
            name: "Event",
            relations: &[
                ("name", Kind::Title),
                ("startDate", Kind::Date(2000)),
                ("endDate", Kind::Date(2001)),
                ("location", Kind::Word(VENUES)),
                ("maximumAttendeeCapacity", Kind::Int(50, 20000)),
            ],
        },
        Domain {
            name: "Movie",
            relations: &[
                ("name", Kind::Title),
                ("director", Kind::Person),
                ("duration", Kind::Int(70, 120)),
                ("datePublished", Kind::Date(1960)),
                ("genre", Kind::Word(GENRES)),
                ("contentRating", Kind::Word(RATINGS)),
            ],
        },
    ]
}

/// Where a split's files go.
struct Split {
    dir: PathBuf,
    gt: GroundTruth,
    domains: Vec<(String, String)>,
}

impl Split {
    fn new(dir: PathBuf) -> Self {
        fs::create_dir_all(dir.join("tables")).expect("create fixture dir");
        Self {
            dir,
            gt: GroundTruth::default(),
            domains: Vec::new(),
        }
    }

    fn add(&mut self, id: String, domain: &str, columns: &[(&str, Kind)], rows: usize, salt: usize) {
        let cells = (0..rows)
            .map(|r| columns.iter().map(|(_, k)| value(*k, r, salt)).collect())
            .collect();
        let table = Table::new(id.clone(), columns.len(), cells).expect("valid table");
        fs::write(self.dir.join("tables").join(format!("{id}.csv")), table.to_csv()).expect("write table");
        for (i, (rel, _)) in columns.iter().enumerate() {
            self.gt.insert(
                ColumnRef {
                    table_id: id.clone(),
                    column_index: i,
                },
                Some(RelationLabel::new(rel).expect("label")),
            );
        }
        self.domains.push((id, domain.to_string()));
    }

    fn finish(self) {
        fs::write(self.dir.join("gt.csv"), self.gt.to_csv()).expect("write gt");
        let mut map = String::from("table_id,domain\n");
        for (id, d) in &self.domains {
            map.push_str(&format!("{id},{d}\n"));
        }
        fs::write(self.dir.join("domains.csv"), map).expect("write domains");
    }
}

/// Rotates the relation list; with `drop`, two tables in three lose one column.
fn layout(relations: &[(&'static str, Kind)], t: usize, drop: bool) -> Vec<(&'static str, Kind)> {
    let n = relations.len();
    let mut cols: Vec<_> = (0..n).map(|i| relations[(i + t) % n]).collect();
    if drop && !t.is_multiple_of(3) {
        cols.remove(1 + t % (n - 1));
    }
    cols
}

fn synthetic(out: &Path) {
    let domains = synthetic_domains();
    let mut train = Split::new(out.join("train"));
    let mut test = Split::new(out.join("test"));
    for d in &domains {
        for t in 0..8 {
            let cols = layout(d.relations, t, false);
            train.add(format!("{}_train_{t:02}", d.name), d.name, &cols, 12, t);
        }
        for t in 0..12 {
            let cols = layout(d.relations, t + 1, true);
            test.add(format!("{}_test_{t:02}", d.name), d.name, &cols, 10, 20 + t);
        }
    }
    train.finish();
    test.finish();

    // replies for the scripted backend: a mix of clean answers, wrapped
    // answers and noise, replayed per column
    let script = serde_json::json!({
        "default": [
            "I am not sure which one fits.",
            "name",
            "The relation is `datePublished`.",
            "**startDate**",
            "author",
            "none of these"
        ]
    });
    fs::write(
        out.join("script.json"),
        serde_json::to_string_pretty(&script).expect("json") + "\n",
    )
    .expect("write script");
}

fn adversarial(out: &Path) {
    const TOPICS: &[&str] = &["opening night", "charity gala", "spring market", "film premiere"];
    let mut train = Split::new(out.join("train"));
    for t in 0..4 {
        train.add(
            format!("Event_notes_{t:02}"),
            "Event",
            &[("about", Kind::Word(TOPICS)), ("description", Kind::Title)],
            8,
            t,
        );
        train.add(
            format!("Event_listing_{t:02}"),
            "Event",
            &[
                ("name", Kind::Title),
                ("startDate", Kind::Date(2010)),
                ("url", Kind::Url("events.example.org")),
                ("maximumAttendeeCapacity", Kind::Int(100, 5000)),
            ],
            8,
            t,
        );
    }
    train.finish();
    let mut test = Split::new(out.join("test"));
    for t in 0..4 {
        test.add(
            format!("Event_test_{t:02}"),
            "Event",
            &[
                ("startDate", Kind::Date(2015)),
                ("url", Kind::Url("events.example.org")),
                ("maximumAttendeeCapacity", Kind::Int(100, 5000)),
            ],
            6,
            10 + t,
        );
    }
    test.finish();
}

fn main() {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    for sub in ["synthetic", "adversarial"] {
        let dir = out.join(sub);
        if dir.exists() {
            fs::remove_dir_all(&dir).expect("clear old fixtures");
        }
    }
    synthetic(&out.join("synthetic"));
    adversarial(&out.join("adversarial"));
    println!("fixtures written to {}", out.display());
}
