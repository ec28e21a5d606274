use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{Days, NaiveDate};

use super::events::{month_name, weekday_name, ContentType, InteractionEvent};
use super::fields;
use crate::features::{FieldSource, RawValue};

/// Days of history (including the reference day) counted by `connection_frequency`.
pub const CONNECTION_WINDOW_DAYS: u64 = 28;

/// One (user, content, reference day) candidate with its features and next-day label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledExample {
    pub user: u32,
    pub content: u32,
    pub reference_date: NaiveDate,
    pub connection_frequency: f64,
    pub content_total_clicks: f64,
    pub user_content_clicks: f64,
    pub label: bool,
}

/// Examples for one content type, with user and content ids interned.
#[derive(Clone, Debug)]
pub struct ExampleSet {
    pub content_type: ContentType,
    pub users: Vec<String>,
    pub contents: Vec<String>,
    pub examples: Vec<LabeledExample>,
}

/// Borrowed view of one example that resolves interned ids for encoding.
#[derive(Clone, Copy, Debug)]
pub struct ExampleRow<'a> {
    pub set: &'a ExampleSet,
    pub example: &'a LabeledExample,
}

impl FieldSource for ExampleRow<'_> {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        let e = self.example;
        fn text(s: &str) -> Option<RawValue<'_>> {
            Some(RawValue::Text(Cow::Borrowed(s)))
        }
        match field {
            fields::USER_ID => text(&self.set.users[e.user as usize]),
            fields::CONTENT_ID => text(&self.set.contents[e.content as usize]),
            fields::CONTENT_TYPE => text(self.set.content_type.as_str()),
            fields::DAY => text(weekday_name(e.reference_date)),
            fields::MONTH => text(month_name(e.reference_date)),
            fields::CONNECTION_FREQUENCY => Some(RawValue::Number(e.connection_frequency)),
            fields::CONTENT_TOTAL_CLICKS => Some(RawValue::Number(e.content_total_clicks)),
            fields::USER_CONTENT_CLICKS => Some(RawValue::Number(e.user_content_clicks)),
            _ => None,
        }
    }
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn row(&self, i: usize) -> ExampleRow<'_> {
        ExampleRow { set: self, example: &self.examples[i] }
    }

    pub fn rows<'a>(&'a self, indices: &'a [usize]) -> impl Iterator<Item = ExampleRow<'a>> + 'a {
        indices.iter().map(move |&i| self.row(i))
    }

    pub fn user_id(&self, e: &LabeledExample) -> &str {
        &self.users[e.user as usize]
    }

    pub fn content_id(&self, e: &LabeledExample) -> &str {
        &self.contents[e.content as usize]
    }

    pub fn num_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.label).count()
    }
}

fn sorted_unique<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    it.collect::<BTreeSet<_>>().into_iter().map(str::to_string).collect()
}

#[derive(Default)]
struct DayLog {
    active: BTreeSet<u32>,
    clicks: Vec<(u32, u32)>,
}

/// Builds next-day click examples for `content_type` at each date in `as_of`.
///
/// For every user with any event on a reference day `d`, one example is
/// emitted per catalog item of the type. Features use events dated `<= d`
/// only; the label is whether the user clicked the item on `d + 1`. The
/// catalog is every content id of the type seen anywhere in `events`.
/// Output is sorted by (user, content, date).
pub fn build_examples(events: &[InteractionEvent], content_type: ContentType, as_of: &[NaiveDate]) -> ExampleSet {
    let users = sorted_unique(events.iter().map(|e| e.user_id.as_str()));
    let contents =
        sorted_unique(events.iter().filter(|e| e.content_type == content_type).map(|e| e.content_id.as_str()));
    let mut set = ExampleSet { content_type, users, contents, examples: Vec::new() };
    if set.contents.is_empty() || as_of.is_empty() {
        if set.contents.is_empty() {
            log::warn!("no `{content_type}` content in the logs; example stream is empty");
        }
        return set;
    }
    let user_idx: HashMap<&str, u32> = set.users.iter().enumerate().map(|(i, u)| (u.as_str(), i as u32)).collect();
    let content_idx: HashMap<&str, u32> =
        set.contents.iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect();

    let mut days: BTreeMap<NaiveDate, DayLog> = BTreeMap::new();
    let mut active_dates: Vec<Vec<NaiveDate>> = vec![Vec::new(); set.users.len()];
    for e in events {
        let u = user_idx[e.user_id.as_str()];
        let day = days.entry(e.date()).or_default();
        day.active.insert(u);
        if e.content_type == content_type {
            day.clicks.push((u, content_idx[e.content_id.as_str()]));
        }
    }
    for (date, day) in &days {
        for &u in &day.active {
            active_dates[u as usize].push(*date);
        }
    }

    let as_of: BTreeSet<NaiveDate> = as_of.iter().copied().collect();
    let last = *as_of.iter().next_back().expect("non-empty");
    let n_contents = set.contents.len() as u32;
    let mut content_total = vec![0u64; set.contents.len()];
    let mut user_content: HashMap<(u32, u32), u64> = HashMap::new();
    for (&date, day) in days.range(..=last) {
        for &(u, c) in &day.clicks {
            content_total[c as usize] += 1;
            *user_content.entry((u, c)).or_default() += 1;
        }
        if !as_of.contains(&date) {
            continue;
        }
        let next = date + Days::new(1);
        let tomorrow: HashSet<(u32, u32)> =
            days.get(&next).map(|d| d.clicks.iter().copied().collect()).unwrap_or_default();
        let window_start = date - Days::new(CONNECTION_WINDOW_DAYS - 1);
        for &u in &day.active {
            let dates = &active_dates[u as usize];
            let lo = dates.partition_point(|d| *d < window_start);
            let hi = dates.partition_point(|d| *d <= date);
            let connection_frequency = (hi - lo) as f64;
            for c in 0..n_contents {
                set.examples.push(LabeledExample {
                    user: u,
                    content: c,
                    reference_date: date,
                    connection_frequency,
                    content_total_clicks: content_total[c as usize] as f64,
                    user_content_clicks: user_content.get(&(u, c)).copied().unwrap_or(0) as f64,
                    label: tomorrow.contains(&(u, c)),
                });
            }
        }
    }
    set.examples.sort_by_key(|e| (e.user, e.content, e.reference_date));
    set
}

/// Feature rows for every catalog item of `content_type` for one user at
/// `date`, whether or not the user was active that day. Used for serving.
/// Returns `None` if the catalog is empty.
pub fn candidate_rows(
    events: &[InteractionEvent],
    content_type: ContentType,
    user_id: &str,
    date: NaiveDate,
) -> Option<ExampleSet> {
    let contents =
        sorted_unique(events.iter().filter(|e| e.content_type == content_type).map(|e| e.content_id.as_str()));
    if contents.is_empty() {
        return None;
    }
    let window_start = date - Days::new(CONNECTION_WINDOW_DAYS - 1);
    let mut active: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut total: HashMap<&str, u64> = HashMap::new();
    let mut mine: HashMap<&str, u64> = HashMap::new();
    for e in events.iter().filter(|e| e.date() <= date) {
        let own = e.user_id == user_id;
        if own && e.date() >= window_start {
            active.insert(e.date());
        }
        if e.content_type == content_type {
            *total.entry(e.content_id.as_str()).or_default() += 1;
            if own {
                *mine.entry(e.content_id.as_str()).or_default() += 1;
            }
        }
    }
    let examples = contents
        .iter()
        .enumerate()
        .map(|(c, id)| LabeledExample {
            user: 0,
            content: c as u32,
            reference_date: date,
            connection_frequency: active.len() as f64,
            content_total_clicks: total.get(id.as_str()).copied().unwrap_or(0) as f64,
            user_content_clicks: mine.get(id.as_str()).copied().unwrap_or(0) as f64,
            label: false,
        })
        .collect();
    Some(ExampleSet { content_type, users: vec![user_id.to_string()], contents, examples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::events::parse_timestamp;

    fn ev(user: &str, content: &str, kind: ContentType, ts: &str) -> InteractionEvent {
        InteractionEvent {
            user_id: user.into(),
            content_id: content.into(),
            content_type: kind,
            timestamp: parse_timestamp(ts).unwrap(),
        }
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn log() -> Vec<InteractionEvent> {
        use ContentType::*;
        vec![
            ev("u1", "a", Drug, "2021-01-01T10:00:00Z"),
            ev("u1", "a", Drug, "2021-01-01T11:00:00Z"),
            ev("u2", "m1", VideoModule, "2021-01-02T09:00:00Z"),
            ev("u1", "b", Drug, "2021-01-03T09:00:00Z"),
            ev("u2", "a", Drug, "2021-01-03T12:00:00Z"),
        ]
    }

    #[test]
    fn features_and_labels() {
        let set = build_examples(&log(), ContentType::Drug, &[d("2021-01-02")]);
        assert_eq!(set.contents, vec!["a", "b"]);
        // Only u2 is active on Jan 2 (through a video event).
        assert_eq!(set.len(), 2);
        let a = set.examples[0];
        assert_eq!(set.user_id(&a), "u2");
        assert_eq!(a.connection_frequency, 1.0);
        assert_eq!(a.content_total_clicks, 2.0);
        assert_eq!(a.user_content_clicks, 0.0);
        assert!(a.label);
        assert!(!set.examples[1].label);
    }

    #[test]
    fn future_events_do_not_leak() {
        let set = build_examples(&log(), ContentType::Drug, &[d("2021-01-01")]);
        assert_eq!(set.len(), 2);
        let a = set.examples.iter().find(|e| set.content_id(e) == "a").unwrap();
        assert_eq!(a.content_total_clicks, 2.0);
        assert_eq!(a.user_content_clicks, 2.0);
        let b = set.examples.iter().find(|e| set.content_id(e) == "b").unwrap();
        assert_eq!(b.content_total_clicks, 0.0);
        assert!(!b.label);
    }

    #[test]
    fn candidate_rows_match_builder_for_active_user() {
        let events = log();
        let built = build_examples(&events, ContentType::Drug, &[d("2021-01-03")]);
        let cands = candidate_rows(&events, ContentType::Drug, "u1", d("2021-01-03")).unwrap();
        let u1: Vec<_> = built.examples.iter().filter(|e| built.user_id(e) == "u1").collect();
        for (x, y) in u1.iter().zip(&cands.examples) {
            assert_eq!(x.connection_frequency, y.connection_frequency);
            assert_eq!(x.content_total_clicks, y.content_total_clicks);
            assert_eq!(x.user_content_clicks, y.user_content_clicks);
        }
        assert_eq!(u1[0].connection_frequency, 2.0);
    }

    #[test]
    fn empty_catalog_gives_empty_stream() {
        let set = build_examples(&log(), ContentType::DrugFamily, &[d("2021-01-02")]);
        assert!(set.is_empty());
        assert!(candidate_rows(&log(), ContentType::DrugFamily, "u1", d("2021-01-02")).is_none());
    }
}
