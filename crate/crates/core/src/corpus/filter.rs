use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::language::LanguageDetector;
use super::work::Work;

/// Inclusion rules applied to a freshly ingested corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub require_english: bool,
    pub min_citations: u64,
    /// Works below `min_citations` are kept anyway when they are at most
    /// this many whole months old.
    pub recent_uncited_months: Option<u32>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            require_english: true,
            min_citations: 1,
            recent_uncited_months: Some(18),
        }
    }
}

impl FilterPolicy {
    /// Policy that keeps everything.
    pub fn permissive() -> Self {
        FilterPolicy {
            require_english: false,
            min_citations: 0,
            recent_uncited_months: None,
        }
    }
}

/// Whole months elapsed from `from` to `to`; zero when `from` is in the future.
pub fn months_between(from: NaiveDate, to: NaiveDate) -> u32 {
    if from >= to {
        return 0;
    }
    let mut months = (to.year() - from.year()) * 12 + to.month() as i32 - from.month() as i32;
    if to.day() < from.day() {
        months -= 1;
    }
    months.max(0) as u32
}

pub struct WorkFilter<'a> {
    policy: FilterPolicy,
    now: NaiveDate,
    detector: Option<&'a dyn LanguageDetector>,
}

impl<'a> WorkFilter<'a> {
    pub fn new(
        policy: FilterPolicy,
        now: NaiveDate,
        detector: Option<&'a dyn LanguageDetector>,
    ) -> Self {
        WorkFilter { policy, now, detector }
    }

    pub fn passes(&self, work: &Work) -> bool {
        self.language_ok(work) && self.citations_ok(work)
    }

    fn language_ok(&self, work: &Work) -> bool {
        if !self.policy.require_english {
            return true;
        }
        match (&work.language, self.detector) {
            (Some(lang), _) => lang.eq_ignore_ascii_case("en"),
            (None, Some(det)) => det.detect(&work.embedding_text()).as_deref() == Some("en"),
            (None, None) => true,
        }
    }

    fn citations_ok(&self, work: &Work) -> bool {
        if work.citation_count >= self.policy.min_citations {
            return true;
        }
        match (self.policy.recent_uncited_months, work.published_on()) {
            (Some(window), Some(date)) => months_between(date, self.now) <= window,
            _ => false,
        }
    }
}

/// Order-preserving subset of `works` that satisfies `policy` as of `now`.
pub fn filter_works(
    works: &[Work],
    policy: &FilterPolicy,
    now: NaiveDate,
    detector: Option<&dyn LanguageDetector>,
) -> Vec<Work> {
    let filter = WorkFilter::new(*policy, now, detector);
    works.iter().filter(|w| filter.passes(w)).cloned().collect()
}
