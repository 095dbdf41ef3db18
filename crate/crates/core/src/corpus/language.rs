use std::collections::HashMap;

/// Pluggable language identification. Implementations must be deterministic.
pub trait LanguageDetector: Send + Sync {
    /// Returns a two-letter code, or `None` when the language is unknown.
    fn detect(&self, text: &str) -> Option<String>;
}

// Frequent word-boundary trigrams per language; '_' marks a word edge.
const PROFILES: &[(&str, &[&str])] = &[
    (
        "en",
        &[
            "_th", "the", "he_", "_an", "and", "nd_", "_of", "of_", "_to", "to_", "ing", "ng_",
            "_in", "in_", "ion", "tio", "on_", "ed_", "er_", "es_", "is_", "_is", "ent", "_co",
            "re_", "ati", "for", "_fo", "or_", "hat", "tha", "_wh", "at_", "ter", "_be", "his",
            "thi", "ly_", "as_", "_wi", "wit", "ith", "_re", "are", "_ar", "ere", "al_", "_we",
        ],
    ),
    (
        "de",
        &[
            "en_", "er_", "_de", "der", "die", "_di", "ie_", "ch_", "sch", "ich", "ein", "_ei",
            "und", "_un", "nd_", "che", "den", "cht", "ung", "gen", "te_", "ine", "_ge", "ten",
            "nde", "_da", "das", "_be", "ver", "_ve", "_zu", "zu_", "_sc", "ist", "_is", "auf",
            "_au", "mit", "_mi", "ber", "ige", "_wi", "wir", "ier", "eit", "ür_", "_fü", "für",
        ],
    ),
    (
        "fr",
        &[
            "es_", "_de", "de_", "le_", "_le", "ent", "_la", "la_", "les", "nt_", "ion", "_et",
            "et_", "re_", "_co", "des", "_pa", "tio", "que", "ue_", "_qu", "_un", "ans", "_en",
            "our", "ur_", "ait", "_pr", "est", "_es", "par", "pou", "_po", "men", "eme", "dan",
            "_da", "ons", "une", "aux", "eur", "ire", "_du", "du_", "_ét", "été", "_à_", "qui",
        ],
    ),
    (
        "es",
        &[
            "_de", "de_", "os_", "la_", "_la", "el_", "_el", "es_", "_qu", "que", "ue_", "_en",
            "en_", "ent", "as_", "_lo", "los", "ión", "ció", "_co", "con", "_se", "ado", "_un",
            "aci", "_pa", "par", "ara", "nte", "_po", "por", "or_", "_es", "est", "_y_", "las",
            "ien", "ero", "ra_", "_al", "_su", "sta", "da_", "do_", "una", "_ha", "mos", "ndo",
        ],
    ),
    (
        "it",
        &[
            "_di", "di_", "_ch", "che", "he_", "la_", "_la", "to_", "_il", "il_", "re_", "ne_",
            "_co", "con", "ell", "lla", "_de", "del", "zio", "ion", "one", "_in", "_pe", "per",
            "er_", "_un", "ent", "nte", "ato", "ta_", "_e_", "no_", "_no", "non", "ia_", "li_",
            "gli", "ere", "are", "_al", "_so", "sta", "tto", "ale", "ono", "_si", "ali", "zza",
        ],
    ),
    (
        "pt",
        &[
            "_de", "de_", "os_", "_qu", "que", "ue_", "ão_", "ção", "_co", "com", "_a_", "_o_",
            "_do", "do_", "da_", "_da", "ent", "_em", "em_", "_pa", "par", "ara", "nte", "_se",
            "men", "ado", "as_", "es_", "um_", "_um", "uma", "_no", "não", "_pr", "ões", "est",
            "_es", "ra_", "ica", "or_", "ais", "_na", "mos", "çõe", "nho", "lho", "ssa", "_e_",
        ],
    ),
    (
        "nl",
        &[
            "en_", "_de", "de_", "an_", "_he", "het", "et_", "_va", "van", "_ee", "een", "_en",
            "_in", "in_", "ijk", "lij", "ver", "_ve", "_ge", "gen", "aar", "er_", "_da", "dat",
            "sch", "cht", "_zi", "_te", "te_", "oor", "ing", "_op", "op_", "_wo", "ord", "_vo",
            "voo", "ijn", "_is", "is_", "ede", "eer", "_ni", "nie", "iet", "_me", "met", "ook",
        ],
    ),
];

/// Default detector: counts how many of the text's word-boundary trigrams
/// fall in each language's frequent-trigram profile.
#[derive(Debug, Clone)]
pub struct TrigramDetector {
    profiles: Vec<(&'static str, HashMap<&'static str, ()>)>,
    min_hits: usize,
    min_hit_rate: f64,
}

impl Default for TrigramDetector {
    fn default() -> Self {
        let profiles = PROFILES
            .iter()
            .map(|(lang, grams)| (*lang, grams.iter().map(|g| (*g, ())).collect()))
            .collect();
        TrigramDetector {
            profiles,
            min_hits: 2,
            min_hit_rate: 0.05,
        }
    }
}

fn word_trigrams(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let lower = text.to_lowercase();
    for word in lower.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
        let padded: Vec<char> = std::iter::once('_')
            .chain(word.chars())
            .chain(std::iter::once('_'))
            .collect();
        for win in padded.windows(3) {
            out.push(win.iter().collect());
        }
    }
    out
}

impl LanguageDetector for TrigramDetector {
    fn detect(&self, text: &str) -> Option<String> {
        let grams = word_trigrams(text);
        if grams.is_empty() {
            return None;
        }
        let mut scores: Vec<(&str, usize)> = self
            .profiles
            .iter()
            .map(|(lang, profile)| {
                let hits = grams.iter().filter(|g| profile.contains_key(g.as_str())).count();
                (*lang, hits)
            })
            .collect();
        scores.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let (best, hits) = scores[0];
        let runner_up = scores.get(1).map_or(0, |s| s.1);
        if hits < self.min_hits
            || (hits as f64) / (grams.len() as f64) < self.min_hit_rate
            || hits == runner_up
        {
            return None;
        }
        Some(best.to_string())
    }
}

/// Detects with the default trigram heuristic.
pub fn detect_language(text: &str) -> Option<String> {
    TrigramDetector::default().detect(text)
}
