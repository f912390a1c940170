//! Seeded scenario data.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AppData, Contact, Event, Expense, Note, Thread};
use crate::hash::sha256_hex;
use crate::value::Decimal;

const FIRST: &[&str] = &[
    "Alice", "Bruno", "Chen", "Dana", "Elif", "Farah", "Gus", "Hana", "Ivan", "Jade", "Kofi", "Lena",
    "Milo", "Nina", "Omar", "Priya", "Quinn", "Rosa", "Sami", "Tara", "Uma", "Viktor", "Wren", "Yara",
];
const LAST: &[&str] = &[
    "Park", "Silva", "Wong", "Novak", "Okafor", "Reyes", "Kim", "Haas", "Moreau", "Ito", "Berg", "Costa",
];
const EVENT_A: &[&str] = &[
    "Team", "Budget", "Design", "Client", "Product", "Quarterly", "Project", "Family", "Book", "Garden",
];
const EVENT_B: &[&str] = &[
    "Sync", "Review", "Lunch", "Call", "Workshop", "Planning", "Check-in", "Dinner", "Meetup", "Retro",
];
const EXPENSE_A: &[&str] = &["Office", "Team", "Client", "Travel", "Home", "Studio", "Weekend", "Conference"];
const EXPENSE_B: &[&str] = &["Coffee", "Lunch", "Taxi", "Supplies", "Parking", "Snacks", "Printing", "Hotel"];
const REPLIES: &[&str] = &[
    "The meeting moved to 3pm, see you there",
    "I can bring the projector tomorrow",
    "Dinner is booked for seven on Friday",
    "The draft is ready for your review",
    "Running ten minutes late, start without me",
];

/// Recipes that add seeded content to a scenario's static data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Filler contacts, threads, events, expenses and notes.
    Background,
    /// A note of `n` to-do items mixing contacts, events and expenses.
    TodoFanout { n: u32, note: String },
    /// `2n` expenses and a note listing `n` of them.
    ExpenseDelete { n: u32, note: String },
    /// A note listing `n` new events.
    CalendarAdd { n: u32, note: String },
    /// `n` new contacts and a note listing their names.
    Guests { n: u32, note: String },
    /// A note of `n` `<label> <amount>` receipt lines.
    Receipts { n: u32, note: String },
    /// A one-line note plus threads so that `contact` sits at `position`.
    ReplyNote { note: String, contact: String, position: u32 },
    /// Events on `date`, on the Saturdays around it, and on weekdays.
    SaturdayEvents { date: String, count: u32 },
}

struct Ctx {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Ctx {
    fn pick<'a>(&mut self, pool: &[&'a str]) -> &'a str {
        pool[self.rng.random_range(0..pool.len())]
    }

    /// A fresh two-part name that no generator has handed out yet.
    fn fresh(&mut self, a: &[&str], b: &[&str]) -> String {
        for _ in 0..1000 {
            let s = format!("{} {}", self.pick(a), self.pick(b));
            if self.used.insert(s.clone()) {
                return s;
            }
        }
        panic!("name pools exhausted")
    }

    fn person(&mut self) -> String {
        self.fresh(FIRST, LAST)
    }

    fn phone(&mut self) -> String {
        format!("555-{:04}", self.rng.random_range(100..10000))
    }

    fn amount(&mut self) -> Decimal {
        let cents: i64 = self.rng.random_range(250..9999);
        Decimal::new(cents.into(), 2)
    }

    fn date(&mut self, days: core::ops::Range<u32>) -> String {
        format!("2024-10-{:02}", self.rng.random_range(days))
    }

    fn time(&mut self) -> String {
        format!("{:02}:{}", self.rng.random_range(8..18), if self.rng.random_bool(0.5) { "00" } else { "30" })
    }
}

fn note(name: &str, lines: &[String]) -> Note {
    let mut body = lines.join("\n");
    body.push('\n');
    Note { name: name.to_string(), body }
}

fn email_for(name: &str) -> String {
    format!("{}@example.com", name.to_ascii_lowercase().replace(' ', "."))
}

/// Static data followed by every generator's output, deterministic in
/// `(scenario id, seed)`.
pub(crate) fn build_data(id: &str, base: &AppData, gens: &[Generator], seed: u64) -> AppData {
    let digest = sha256_hex(format!("{id}:{seed}").as_bytes());
    let mixed = u64::from_str_radix(&digest[..16], 16).unwrap_or(seed);
    let mut cx = Ctx { rng: ChaCha8Rng::seed_from_u64(mixed), used: BTreeSet::new() };
    let mut data = base.clone();
    for c in &data.contacts {
        cx.used.insert(c.name.clone());
    }
    for e in &data.events {
        cx.used.insert(e.title.clone());
    }
    for e in &data.expenses {
        cx.used.insert(e.label.clone());
    }
    for g in gens {
        let extra = run(g, &mut cx, &data);
        data.extend(extra);
    }
    data
}

fn run(g: &Generator, cx: &mut Ctx, existing: &AppData) -> AppData {
    let mut out = AppData::default();
    match g {
        Generator::Background => {
            for i in 0..6 {
                let name = cx.person();
                if i < 4 {
                    out.threads.push(Thread {
                        contact: name.clone(),
                        messages: alloc::vec![format!("Hi {}, talk soon", name.split(' ').next().unwrap_or(""))],
                    });
                }
                let phone = cx.phone();
                out.contacts.push(Contact { email: email_for(&name), name, phone });
            }
            for _ in 0..5 {
                let title = cx.fresh(EVENT_A, EVENT_B);
                let (date, time) = (cx.date(21..32), cx.time());
                out.events.push(Event { title, date, time });
            }
            for _ in 0..5 {
                let label = cx.fresh(EXPENSE_A, EXPENSE_B);
                let (amount, date) = (cx.amount(), cx.date(1..16));
                out.expenses.push(Expense { label, amount, date });
            }
            out.notes.push(note("groceries.md", &["Oat milk".into(), "Rye bread".into(), "Lemons".into()]));
            out.notes.push(note("ideas.md", &["Try the new trail on Sunday".into()]));
        }
        Generator::TodoFanout { n, note: name } => {
            let mut lines = Vec::new();
            for i in 0..*n {
                let line = match i % 3 {
                    0 => format!("Add contact {} with phone {}", cx.person(), cx.phone()),
                    1 => {
                        let title = cx.fresh(EVENT_A, EVENT_B);
                        format!("Schedule {title} on {} at {}", cx.date(17..26), cx.time())
                    }
                    _ => format!("Log expense {} of {}", cx.fresh(EXPENSE_A, EXPENSE_B), cx.amount()),
                };
                lines.push(line);
            }
            out.notes.push(note(name, &lines));
        }
        Generator::ExpenseDelete { n, note: name } => {
            let mut labels = Vec::new();
            for _ in 0..2 * n {
                let label = cx.fresh(EXPENSE_A, EXPENSE_B);
                let (amount, date) = (cx.amount(), cx.date(1..16));
                out.expenses.push(Expense { label: label.clone(), amount, date });
                labels.push(label);
            }
            labels.shuffle(&mut cx.rng);
            labels.truncate(*n as usize);
            out.notes.push(note(name, &labels));
        }
        Generator::CalendarAdd { n, note: name } => {
            let lines: Vec<String> = (0..*n)
                .map(|_| {
                    let title = cx.fresh(EVENT_A, EVENT_B);
                    format!("{title} on {} at {}", cx.date(17..32), cx.time())
                })
                .collect();
            out.notes.push(note(name, &lines));
        }
        Generator::Guests { n, note: name } => {
            let mut names = Vec::new();
            for _ in 0..*n {
                let person = cx.person();
                let phone = cx.phone();
                out.contacts.push(Contact { email: email_for(&person), name: person.clone(), phone });
                names.push(person);
            }
            out.notes.push(note(name, &names));
        }
        Generator::Receipts { n, note: name } => {
            let lines: Vec<String> = (0..*n)
                .map(|_| format!("{} {}", cx.fresh(EXPENSE_A, EXPENSE_B), cx.amount()))
                .collect();
            out.notes.push(note(name, &lines));
        }
        Generator::ReplyNote { note: name, contact, position } => {
            let line = cx.pick(REPLIES).to_string();
            out.notes.push(note(name, &[line]));
            let have = existing.threads.len() as u32;
            for _ in have + 1..*position {
                let person = cx.person();
                out.threads.push(Thread {
                    contact: person.clone(),
                    messages: alloc::vec!["See you at the gym".to_string()],
                });
            }
            out.threads.push(Thread {
                contact: contact.clone(),
                messages: alloc::vec!["Any news about tomorrow?".to_string()],
            });
            out.contacts.push(Contact { name: contact.clone(), phone: cx.phone(), email: email_for(contact) });
        }
        Generator::SaturdayEvents { date, count } => {
            let target = super::parse_date(date).expect("valid date");
            let week = chrono::Days::new(7);
            let others = [target.checked_sub_days(week), target.checked_add_days(week)];
            for _ in 0..*count {
                let title = cx.fresh(EVENT_A, EVENT_B);
                let time = cx.time();
                out.events.push(Event { title: title.clone(), date: date.clone(), time: time.clone() });
                // The same recurring title on a neighbouring Saturday.
                if cx.rng.random_bool(0.5) {
                    if let Some(Some(d)) = others.get(cx.rng.random_range(0..2)) {
                        out.events.push(Event { title, date: d.format("%Y-%m-%d").to_string(), time });
                    }
                }
            }
            for d in others.iter().flatten() {
                let title = cx.fresh(EVENT_A, EVENT_B);
                out.events.push(Event { title, date: d.format("%Y-%m-%d").to_string(), time: cx.time() });
            }
            for _ in 0..2 {
                let title = cx.fresh(EVENT_A, EVENT_B);
                out.events.push(Event { title, date: cx.date(14..19), time: cx.time() });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let gens = vec![
            Generator::Background,
            Generator::ExpenseDelete { n: 10, note: "x.md".into() },
        ];
        let a = build_data("s", &AppData::default(), &gens, 1);
        let b = build_data("s", &AppData::default(), &gens, 1);
        let c = build_data("s", &AppData::default(), &gens, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.expenses.len(), 25);
        assert_eq!(a.note("x.md").unwrap().lines().count(), 10);
    }

    #[test]
    fn reply_contact_position() {
        let gens = vec![
            Generator::Background,
            Generator::ReplyNote { note: "r.md".into(), contact: "Zoe".into(), position: 7 },
        ];
        let d = build_data("s", &AppData::default(), &gens, 3);
        assert_eq!(d.threads.len(), 7);
        assert_eq!(d.threads[6].contact, "Zoe");
    }

    #[test]
    fn calendar_titles_unique() {
        let gens = vec![Generator::Background, Generator::CalendarAdd { n: 20, note: "e.md".into() }];
        let d = build_data("s", &AppData::default(), &gens, 9);
        let lines: Vec<&str> = d.note("e.md").unwrap().lines().collect();
        let titles: BTreeSet<&str> = lines.iter().map(|l| l.split(" on ").next().unwrap()).collect();
        assert_eq!(titles.len(), 20);
    }
}
