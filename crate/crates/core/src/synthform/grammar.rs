//! Filled-in value grammars and the matching rule-based pattern taggers.

use crate::docmodel::KeyIntent;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Surface pattern a filled-in value follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    NameOnly,
    NameWithId,
    NameWithExtra,
    PersonName,
    IdDigits,
    IdPrefixed,
    IdAbn,
    NotApplicable,
    DateShortMonth,
    DateLongMonth,
    DateSlash,
    DateDash,
    ClassOrdinaryShares,
    ClassFullyPaid,
    ClassOrdinary,
    ClassCode,
    SharesComma,
    SharesPlain,
    SharesWithUnit,
    PctSymbol,
    PctPlain,
    PctWords,
}

impl PatternFamily {
    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::NameOnly => "name_only",
            PatternFamily::NameWithId => "name_with_id",
            PatternFamily::NameWithExtra => "name_with_extra",
            PatternFamily::PersonName => "person_name",
            PatternFamily::IdDigits => "id_digits",
            PatternFamily::IdPrefixed => "id_prefixed",
            PatternFamily::IdAbn => "id_abn",
            PatternFamily::NotApplicable => "not_applicable",
            PatternFamily::DateShortMonth => "date_short_month",
            PatternFamily::DateLongMonth => "date_long_month",
            PatternFamily::DateSlash => "date_slash",
            PatternFamily::DateDash => "date_dash",
            PatternFamily::ClassOrdinaryShares => "class_ordinary_shares",
            PatternFamily::ClassFullyPaid => "class_fully_paid",
            PatternFamily::ClassOrdinary => "class_ordinary",
            PatternFamily::ClassCode => "class_code",
            PatternFamily::SharesComma => "shares_comma",
            PatternFamily::SharesPlain => "shares_plain",
            PatternFamily::SharesWithUnit => "shares_with_unit",
            PatternFamily::PctSymbol => "pct_symbol",
            PatternFamily::PctPlain => "pct_plain",
            PatternFamily::PctWords => "pct_words",
        }
    }
}

/// Weighted pattern families for one intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePattern {
    pub intent: KeyIntent,
    pub families: Vec<(PatternFamily, f64)>,
}

impl ValuePattern {
    pub fn weights_sum(&self) -> f64 {
        self.families.iter().map(|(_, w)| w).sum()
    }

    pub fn sample_family<R: Rng + ?Sized>(&self, rng: &mut R) -> PatternFamily {
        let total = self.weights_sum();
        let mut dart = rng.random::<f64>() * total;
        for &(fam, w) in &self.families {
            if dart < w {
                return fam;
            }
            dart -= w;
        }
        self.families.last().expect("non-empty pattern").0
    }
}

/// Default grammar for every intent, in `KeyIntent::ALL` order.
pub fn default_patterns() -> Vec<ValuePattern> {
    use PatternFamily::*;
    KeyIntent::ALL
        .iter()
        .map(|&intent| {
            let families = match intent {
                KeyIntent::ComNm => vec![(NameOnly, 0.75), (NameWithId, 0.15), (NameWithExtra, 0.10)],
                KeyIntent::HoldNm => vec![(NameOnly, 0.55), (NameWithExtra, 0.30), (PersonName, 0.15)],
                KeyIntent::ComId => vec![(IdDigits, 0.60), (IdPrefixed, 0.25), (IdAbn, 0.15)],
                KeyIntent::HoldId => vec![(IdDigits, 0.50), (IdPrefixed, 0.20), (IdAbn, 0.10), (NotApplicable, 0.20)],
                KeyIntent::ChgDate | KeyIntent::GvnDate | KeyIntent::NtcDate => {
                    vec![(DateShortMonth, 0.40), (DateSlash, 0.30), (DateLongMonth, 0.20), (DateDash, 0.10)]
                }
                KeyIntent::Class => vec![(ClassOrdinaryShares, 0.45), (ClassFullyPaid, 0.20), (ClassOrdinary, 0.20), (ClassCode, 0.15)],
                KeyIntent::PreShr | KeyIntent::NewShr => vec![(SharesComma, 0.80), (SharesPlain, 0.10), (SharesWithUnit, 0.10)],
                KeyIntent::PrePct | KeyIntent::NewPct => vec![(PctSymbol, 0.85), (PctPlain, 0.10), (PctWords, 0.05)],
            };
            ValuePattern { intent, families }
        })
        .collect()
}

const NAME_HEADS: [&str; 20] = [
    "Tinybeans",
    "Austral",
    "Westgold",
    "Pacific",
    "Copperline",
    "Bluewater",
    "Northern",
    "Sandfire",
    "Redbank",
    "Silverlake",
    "Kingsgate",
    "Meridian",
    "Atlas",
    "Summit",
    "Harbour",
    "Eastern",
    "Vantage",
    "Greenstone",
    "Ironbark",
    "Coastal",
];
const NAME_MIDS: [&str; 10] =
    ["Group", "Resources", "Holdings", "Mining", "Energy", "Capital", "Minerals", "Technologies", "Healthcare", "Properties"];
const NAME_SUFFIXES: [&str; 3] = ["Ltd", "Limited", "Pty Ltd"];
const FIRST_NAMES: [&str; 8] = ["John", "Mary", "Peter", "Susan", "David", "Karen", "Michael", "Helen"];
const LAST_NAMES: [&str; 8] = ["Smith", "Nguyen", "Brown", "Wilson", "Taylor", "Chen", "Walker", "Kelly"];
const MONTHS: [(&str, &str); 12] = [
    ("Jan", "January"),
    ("Feb", "February"),
    ("Mar", "March"),
    ("Apr", "April"),
    ("May", "May"),
    ("Jun", "June"),
    ("Jul", "July"),
    ("Aug", "August"),
    ("Sep", "September"),
    ("Oct", "October"),
    ("Nov", "November"),
    ("Dec", "December"),
];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

pub fn company_name<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!("{} {} {}", pick(rng, &NAME_HEADS), pick(rng, &NAME_MIDS), pick(rng, &NAME_SUFFIXES))
}

pub fn person_name<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!("{} {}", pick(rng, &FIRST_NAMES), pick(rng, &LAST_NAMES))
}

fn acn<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!("{:03} {:03} {:03}", rng.random_range(0..1000), rng.random_range(0..1000), rng.random_range(0..1000))
}

fn with_commas(mut n: u64) -> String {
    let mut groups = Vec::new();
    loop {
        if n < 1000 {
            groups.push(format!("{n}"));
            break;
        }
        groups.push(format!("{:03}", n % 1000));
        n /= 1000;
    }
    groups.reverse();
    groups.join(",")
}

/// A calendar date as (day, month index 0..12, year).
pub type Date = (u32, usize, u32);

pub fn random_date<R: Rng + ?Sized>(rng: &mut R) -> Date {
    (rng.random_range(1..=28), rng.random_range(0..12), rng.random_range(2003..=2015))
}

pub fn format_date(date: Date, family: PatternFamily) -> String {
    let (d, m, y) = date;
    match family {
        PatternFamily::DateShortMonth => format!("{d} {} {y}", MONTHS[m].0),
        PatternFamily::DateLongMonth => format!("{} {d}, {y}", MONTHS[m].1),
        PatternFamily::DateDash => format!("{d:02}-{:02}-{y}", m + 1),
        _ => format!("{d:02}/{:02}/{y}", m + 1),
    }
}

/// Renders one value of the given family.
pub fn render_value<R: Rng + ?Sized>(family: PatternFamily, rng: &mut R) -> String {
    use PatternFamily::*;
    match family {
        NameOnly => company_name(rng),
        NameWithId => format!("{} ACN {}", company_name(rng), acn(rng)),
        NameWithExtra => {
            let extra = pick(rng, &["and its related bodies corporate", "(the Company)", "and associates"]);
            format!("{} {extra}", company_name(rng))
        }
        PersonName => person_name(rng),
        IdDigits => acn(rng),
        IdPrefixed => format!("ACN {}", acn(rng)),
        IdAbn => format!(
            "ABN {:02} {:03} {:03} {:03}",
            rng.random_range(10..100),
            rng.random_range(0..1000),
            rng.random_range(0..1000),
            rng.random_range(0..1000)
        ),
        NotApplicable => "N/A".to_string(),
        DateShortMonth | DateLongMonth | DateSlash | DateDash => format_date(random_date(rng), family),
        ClassOrdinaryShares => "Ordinary shares".to_string(),
        ClassFullyPaid => "Fully paid ordinary shares".to_string(),
        ClassOrdinary => "Ordinary".to_string(),
        ClassCode => "ORD".to_string(),
        SharesComma => with_commas(rng.random_range(100_000..500_000_000)),
        SharesPlain => format!("{}", rng.random_range(100_000u64..500_000_000)),
        SharesWithUnit => format!("{} ordinary shares", with_commas(rng.random_range(100_000..500_000_000))),
        PctSymbol => format!("{:.2}%", rng.random_range(1.0..40.0)),
        PctPlain => format!("{:.2}", rng.random_range(1.0..40.0)),
        PctWords => format!("{:.2} per cent", rng.random_range(1.0..40.0)),
    }
}

struct Taggers {
    name_with_id: Regex,
    name_extra: Regex,
    person: Regex,
    id_digits: Regex,
    id_prefixed: Regex,
    id_abn: Regex,
    date_short: Regex,
    date_long: Regex,
    date_slash: Regex,
    date_dash: Regex,
    shares_comma: Regex,
    shares_plain: Regex,
    shares_unit: Regex,
    pct_symbol: Regex,
    pct_plain: Regex,
    pct_words: Regex,
}

fn taggers() -> &'static Taggers {
    static CELL: OnceLock<Taggers> = OnceLock::new();
    CELL.get_or_init(|| {
        let r = |p: &str| Regex::new(p).expect("valid tagger regex");
        Taggers {
            name_with_id: r(r"\sACN \d{3} \d{3} \d{3}$"),
            name_extra: r(r"(and its related bodies corporate|\(the Company\)|and associates)$"),
            person: r(r"^[A-Z][a-z]+ [A-Z][a-z]+$"),
            id_digits: r(r"^\d{3} \d{3} \d{3}$"),
            id_prefixed: r(r"^ACN \d{3} \d{3} \d{3}$"),
            id_abn: r(r"^ABN \d{2} \d{3} \d{3} \d{3}$"),
            date_short: r(r"^\d{1,2} (Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec) \d{4}$"),
            date_long: r(r"^[A-Z][a-z]{2,8} \d{1,2}, \d{4}$"),
            date_slash: r(r"^\d{2}/\d{2}/\d{4}$"),
            date_dash: r(r"^\d{2}-\d{2}-\d{4}$"),
            shares_comma: r(r"^\d{1,3}(,\d{3})+$"),
            shares_plain: r(r"^\d+$"),
            shares_unit: r(r"^\d{1,3}(,\d{3})* ordinary shares$"),
            pct_symbol: r(r"^\d+\.\d+%$"),
            pct_plain: r(r"^\d+\.\d+$"),
            pct_words: r(r"^\d+\.\d+ per cent$"),
        }
    })
}

/// Rule-based pattern tagger. Returns `None` for text matching no family of
/// the intent (typically corrupted values).
pub fn tag_value(intent: KeyIntent, text: &str) -> Option<PatternFamily> {
    use PatternFamily::*;
    let t = taggers();
    let text = text.trim();
    match intent {
        KeyIntent::ComNm | KeyIntent::HoldNm => {
            if t.name_with_id.is_match(text) {
                Some(NameWithId)
            } else if t.name_extra.is_match(text) {
                Some(NameWithExtra)
            } else if t.person.is_match(text) {
                Some(PersonName)
            } else if text.ends_with("Ltd") || text.ends_with("Limited") {
                Some(NameOnly)
            } else {
                None
            }
        }
        KeyIntent::ComId | KeyIntent::HoldId => {
            if text == "N/A" {
                Some(NotApplicable)
            } else if t.id_prefixed.is_match(text) {
                Some(IdPrefixed)
            } else if t.id_abn.is_match(text) {
                Some(IdAbn)
            } else if t.id_digits.is_match(text) {
                Some(IdDigits)
            } else {
                None
            }
        }
        KeyIntent::ChgDate | KeyIntent::GvnDate | KeyIntent::NtcDate => {
            if t.date_short.is_match(text) {
                Some(DateShortMonth)
            } else if t.date_long.is_match(text) {
                Some(DateLongMonth)
            } else if t.date_slash.is_match(text) {
                Some(DateSlash)
            } else if t.date_dash.is_match(text) {
                Some(DateDash)
            } else {
                None
            }
        }
        KeyIntent::Class => match text {
            "Ordinary shares" => Some(ClassOrdinaryShares),
            "Fully paid ordinary shares" => Some(ClassFullyPaid),
            "Ordinary" => Some(ClassOrdinary),
            "ORD" => Some(ClassCode),
            _ => None,
        },
        KeyIntent::PreShr | KeyIntent::NewShr => {
            if t.shares_unit.is_match(text) {
                Some(SharesWithUnit)
            } else if t.shares_comma.is_match(text) {
                Some(SharesComma)
            } else if t.shares_plain.is_match(text) {
                Some(SharesPlain)
            } else {
                None
            }
        }
        KeyIntent::PrePct | KeyIntent::NewPct => {
            if t.pct_symbol.is_match(text) {
                Some(PctSymbol)
            } else if t.pct_words.is_match(text) {
                Some(PctWords)
            } else if t.pct_plain.is_match(text) {
                Some(PctPlain)
            } else {
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_sum_to_one() {
        for p in default_patterns() {
            assert!((p.weights_sum() - 1.0).abs() < 1e-12, "{:?}", p.intent);
        }
    }

    #[test]
    fn tagger_recovers_every_rendered_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in default_patterns() {
            for &(fam, _) in &p.families {
                for _ in 0..50 {
                    let text = render_value(fam, &mut rng);
                    assert_eq!(tag_value(p.intent, &text), Some(fam), "{:?} {text:?}", p.intent);
                }
            }
        }
    }

    #[test]
    fn commas() {
        assert_eq!(with_commas(1_234_567), "1,234,567");
        assert_eq!(with_commas(100_000), "100,000");
        assert_eq!(with_commas(12), "12");
    }

    #[test]
    fn sampling_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = &default_patterns()[KeyIntent::PrePct.index()];
        let n = 20_000;
        let hits = (0..n).filter(|_| p.sample_family(&mut rng) == PatternFamily::PctSymbol).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.85).abs() < 0.015, "{frac}");
    }
}
