//! Published word lists driving the mock provider.
//!
//! These lists are part of the test contract: fixtures and expected values are
//! derived from them by hand. Bump [`MOCK_RULES_VERSION`] on any change.

use crate::graph::{InterestCategory, SemanticKind};
use crate::text::tokens;

pub const MOCK_RULES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermClass {
    Activity,
    Hobby,
    Place,
    Holiday,
    Calendar,
    Sentiment,
}

impl TermClass {
    pub fn semantic_kind(self) -> SemanticKind {
        match self {
            TermClass::Activity | TermClass::Hobby => SemanticKind::Activity,
            TermClass::Place => SemanticKind::Location,
            TermClass::Holiday | TermClass::Calendar => SemanticKind::Datetime,
            TermClass::Sentiment => SemanticKind::Sentiment,
        }
    }

    /// Interest category for terms that become interests.
    pub fn interest_category(self) -> Option<InterestCategory> {
        match self {
            TermClass::Activity => Some(InterestCategory::Activity),
            TermClass::Hobby => Some(InterestCategory::Hobby),
            TermClass::Place => Some(InterestCategory::Location),
            TermClass::Holiday => Some(InterestCategory::Date),
            TermClass::Calendar | TermClass::Sentiment => None,
        }
    }
}

#[derive(Debug)]
pub struct Term {
    pub canonical: &'static str,
    /// Surface forms (including the canonical one) recognised in text.
    pub forms: &'static [&'static str],
    pub class: TermClass,
}

macro_rules! terms {
    ($($class:ident $canonical:literal => [$($form:literal),* $(,)?]),* $(,)?) => {
        &[$(Term { canonical: $canonical, forms: &[$canonical, $($form),*], class: TermClass::$class }),*]
    };
}

pub static TERMS: &[Term] = terms![
    Activity "travel" => ["trip", "trips", "travels", "traveled", "travelled", "traveling", "travelling", "vacation", "vacations", "journey"],
    Activity "hiking" => ["hike", "hikes", "hiked", "trek", "trekking"],
    Activity "swimming" => ["swim", "swam", "swims"],
    Activity "birthday" => ["birthdays", "bday"],
    Activity "concert" => ["concerts", "gig", "gigs"],
    Activity "camping" => ["camp", "camped", "campfire"],
    Activity "wedding" => ["weddings"],
    Activity "graduation" => ["graduated"],
    Activity "picnic" => ["picnics"],
    Activity "skiing" => ["ski", "skied"],
    Activity "kayaking" => ["kayak", "kayaked"],
    Activity "cycling" => ["biking", "bike ride"],
    Activity "surfing" => ["surf", "surfed"],
    Activity "festival" => ["festivals"],
    Activity "marathon" => ["marathons"],
    Activity "road trip" => ["road trips"],
    Activity "water show" => ["water shows"],
    Hobby "photography" => [],
    Hobby "painting" => ["painted"],
    Hobby "cooking" => ["cook", "cooked"],
    Hobby "baking" => ["bake", "baked"],
    Hobby "gardening" => ["gardened"],
    Hobby "fishing" => ["fished"],
    Hobby "knitting" => ["knitted"],
    Hobby "chess" => [],
    Hobby "yoga" => [],
    Hobby "pottery" => [],
    Place "beach" => ["beaches"],
    Place "lake" => ["lakes"],
    Place "mountains" => ["mountain"],
    Place "park" => ["parks"],
    Place "museum" => ["museums"],
    Place "zoo" => [],
    Place "aquarium" => [],
    Place "yosemite" => [],
    Place "paris" => [],
    Place "hawaii" => [],
    Place "tokyo" => [],
    Place "london" => [],
    Place "rome" => [],
    Place "lisbon" => [],
    Place "iceland" => [],
    Place "seattle" => [],
    Place "disney world" => ["disneyworld"],
    Place "grand canyon" => [],
    Place "new york" => ["nyc"],
    Holiday "christmas" => ["xmas"],
    Holiday "thanksgiving" => [],
    Holiday "halloween" => [],
    Holiday "new year" => ["new years"],
    Holiday "easter" => [],
    Calendar "summer" => [],
    Calendar "winter" => [],
    Calendar "spring" => [],
    Calendar "autumn" => [],
    Calendar "weekend" => ["weekends"],
    Calendar "january" => [],
    Calendar "february" => [],
    Calendar "march" => [],
    Calendar "april" => [],
    Calendar "june" => [],
    Calendar "july" => [],
    Calendar "august" => [],
    Calendar "september" => [],
    Calendar "october" => [],
    Calendar "november" => [],
    Calendar "december" => [],
    Sentiment "happy" => [],
    Sentiment "joyful" => [],
    Sentiment "fun" => [],
    Sentiment "amazing" => [],
    Sentiment "wonderful" => [],
    Sentiment "sad" => [],
    Sentiment "exciting" => ["excited"],
    Sentiment "relaxing" => ["relaxed"],
    Sentiment "peaceful" => [],
    Sentiment "scary" => ["scared"],
    Sentiment "proud" => [],
    Sentiment "grateful" => [],
    Sentiment "nostalgic" => [],
    Sentiment "beautiful" => [],
];

/// Capitalized words that are never treated as participant names.
pub static STOP_WORDS: &[&str] = &[
    "a", "about", "after", "afterwards", "all", "also", "an", "and", "another", "any", "are",
    "as", "at", "before", "both", "but", "by", "can", "could", "did", "do", "during", "each",
    "eventually", "everyone", "everybody", "finally", "first", "for", "from", "had", "have",
    "he", "her", "here", "his", "how", "i", "if", "in", "is", "it", "its", "just", "last",
    "later", "let", "lots", "me", "monday", "tuesday", "wednesday", "thursday", "friday",
    "saturday", "sunday", "may", "my", "next", "no", "not", "now", "of", "oh", "on", "once",
    "one", "or", "our", "out", "she", "so", "some", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "to", "today", "tonight", "up", "us", "very",
    "was", "we", "well", "went", "were", "what", "when", "where", "which", "while", "who",
    "why", "will", "with", "wow", "yes", "yesterday", "you", "your",
];

pub fn is_stop_word(lower: &str) -> bool {
    STOP_WORDS.contains(&lower)
}

/// The term whose canonical form equals `canonical`.
pub fn lookup(canonical: &str) -> Option<&'static Term> {
    TERMS.iter().find(|t| t.canonical == canonical)
}

/// A lexicon hit inside a token sequence.
#[derive(Debug, Clone, Copy)]
pub struct TermMatch {
    pub start: usize,
    pub len: usize,
    pub term: &'static Term,
}

/// Greedy left-to-right, longest-form-first matches over lowercase tokens.
pub fn find_terms(toks: &[String]) -> Vec<TermMatch> {
    let forms: Vec<(Vec<String>, &'static Term)> = TERMS
        .iter()
        .flat_map(|term| term.forms.iter().map(move |f| (tokens(f), term)))
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let best = forms
            .iter()
            .filter(|(form, _)| toks[i..].starts_with(form))
            .max_by_key(|(form, _)| form.len());
        match best {
            Some((form, term)) => {
                out.push(TermMatch {
                    start: i,
                    len: form.len(),
                    term,
                });
                i += form.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Every surface form for a canonical label: lexicon forms when the label is
/// a known term, plus the label itself and its plain plural.
pub fn label_forms(label: &str) -> Vec<Vec<String>> {
    let mut out = vec![tokens(label), tokens(&format!("{label}s"))];
    if let Some(term) = lookup(label) {
        out.extend(term.forms.iter().map(|f| tokens(f)));
    }
    out.retain(|f| !f.is_empty());
    out.dedup();
    out
}
