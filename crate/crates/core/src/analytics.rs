//! Deployment statistics, co-attendance structure, and mixed-attendance
//! ("bridge") scoring.
//!
//! Everything here is a pure function of a snapshot and is invariant under
//! the order of its input records.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::Role;
use crate::model::{Event, EventId, PersonId, TimeInterval};
use crate::participation::ParticipationRecord;

/// Table-style summary of one deployment over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentStats {
    pub duration_days: i64,
    pub events_total: u64,
    pub self_organized_count: u64,
    /// `self_organized_count / events_total`, 0 when there are no events.
    pub self_organized_ratio: f64,
    pub unique_hosts: u64,
    pub unique_participants: u64,
    pub participation_instances: u64,
}

/// An event is self-organized when its host was below facilitator at the
/// moment it was created. Later promotions do not change the answer.
pub fn classify_self_organized(event: &Event) -> bool {
    event.created_by_role_snapshot < Role::Facilitator
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Count co-hosts toward `unique_hosts` as well as the primary host.
    pub include_co_hosts: bool,
}

/// Window length in community-local days, rounded up.
pub fn local_duration_days(window: &TimeInterval, tz: Tz) -> i64 {
    let start = window.start.with_timezone(&tz).naive_local();
    let end = window.end.with_timezone(&tz).naive_local();
    let secs = (end - start).num_seconds();
    if secs <= 0 {
        0
    } else {
        (secs + 86_399) / 86_400
    }
}

/// Computes the summary for live events starting inside `window`.
///
/// Participation counts only attending records (going or checked in) on those
/// events: one instance per `(person, event)` pair. Check-in re-scans never add
/// instances.
pub fn compute_deployment_stats<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    records: impl IntoIterator<Item = &'a ParticipationRecord>,
    window: &TimeInterval,
    tz: Tz,
    options: StatsOptions,
) -> DeploymentStats {
    let counted: Vec<&Event> = events
        .into_iter()
        .filter(|e| e.state.is_live() && window.contains(e.interval.start))
        .collect();
    let counted_ids: HashSet<&EventId> = counted.iter().map(|e| &e.id).collect();
    let self_organized = counted.iter().filter(|e| classify_self_organized(e)).count() as u64;
    let mut hosts: HashSet<&PersonId> = HashSet::new();
    for e in &counted {
        hosts.insert(&e.host_id);
        if options.include_co_hosts {
            hosts.extend(e.co_hosts.iter());
        }
    }
    let mut participants: HashSet<&PersonId> = HashSet::new();
    let mut pairs: HashSet<(&PersonId, &EventId)> = HashSet::new();
    for r in records {
        if r.state.is_attending() && counted_ids.contains(&r.event_id) {
            participants.insert(&r.person_id);
            pairs.insert((&r.person_id, &r.event_id));
        }
    }
    let total = counted.len() as u64;
    DeploymentStats {
        duration_days: local_duration_days(window, tz),
        events_total: total,
        self_organized_count: self_organized,
        self_organized_ratio: if total == 0 { 0.0 } else { self_organized as f64 / total as f64 },
        unique_hosts: hosts.len() as u64,
        unique_participants: participants.len() as u64,
        participation_instances: pairs.len() as u64,
    }
}

/// Column order of the stats CSV export.
pub const STATS_CSV_HEADER: [&str; 7] = ["Comm.", "Dur. (d)", "Evts", "Self-Org.", "Hosts", "Parts.", "Part.-Instances"];

/// Renders rows as CSV with [`STATS_CSV_HEADER`] columns.
pub fn stats_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a DeploymentStats)>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATS_CSV_HEADER).expect("in-memory csv write");
    for (name, s) in rows {
        w.write_record([
            name.to_string(),
            s.duration_days.to_string(),
            s.events_total.to_string(),
            s.self_organized_count.to_string(),
            s.unique_hosts.to_string(),
            s.unique_participants.to_string(),
            s.participation_instances.to_string(),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

/// Undirected weighted co-attendance graph. Edges are stored with the smaller
/// person id first; weights count shared attended events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoAttendanceGraph {
    pub nodes: BTreeSet<PersonId>,
    pub edges: BTreeMap<(PersonId, PersonId), u32>,
}

impl CoAttendanceGraph {
    pub fn weight(&self, a: &PersonId, b: &PersonId) -> u32 {
        let key = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        self.edges.get(&key).copied().unwrap_or(0)
    }
}

pub fn co_attendance_graph<'a>(records: impl IntoIterator<Item = &'a ParticipationRecord>) -> CoAttendanceGraph {
    let mut by_event: HashMap<&EventId, BTreeSet<&PersonId>> = HashMap::new();
    let mut graph = CoAttendanceGraph::default();
    for r in records {
        if r.state.is_attending() {
            by_event.entry(&r.event_id).or_default().insert(&r.person_id);
            graph.nodes.insert(r.person_id.clone());
        }
    }
    for attendees in by_event.values() {
        let list: Vec<&&PersonId> = attendees.iter().collect();
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                *graph.edges.entry(((**a).clone(), (**b).clone())).or_insert(0) += 1;
            }
        }
    }
    graph
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("no attendee carries a group label")]
    NoLabeledAttendees,
}

/// Normalized Shannon entropy of the attendees' group distribution, divided
/// by `ln k` where `k` is the number of groups in the whole community.
///
/// Returns exactly 1.0 when attendees split evenly across all `k` groups and
/// exactly 0.0 when `k ≤ 1` or only one group shows up. Attendees without a
/// label are ignored.
pub fn mixed_attendance_score<'a, L>(
    attendees: impl IntoIterator<Item = &'a PersonId>,
    grouping: &HashMap<PersonId, L>,
) -> Result<f64, AnalyticsError>
where
    L: Eq + std::hash::Hash + Ord + 'a,
{
    let k = grouping.values().collect::<HashSet<_>>().len();
    let mut counts: BTreeMap<&L, u64> = BTreeMap::new();
    for p in attendees {
        if let Some(label) = grouping.get(p) {
            *counts.entry(label).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(AnalyticsError::NoLabeledAttendees);
    }
    if k <= 1 || counts.len() == 1 {
        return Ok(0.0);
    }
    let first = *counts.values().next().unwrap();
    if counts.len() == k && counts.values().all(|&c| c == first) {
        return Ok(1.0);
    }
    let n: u64 = counts.values().sum();
    let entropy: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum();
    Ok((entropy / (k as f64).ln()).clamp(0.0, 1.0))
}

/// Default cohort for each person: the tag they most often RSVPed to (going,
/// checked in, or starred). Ties break toward the lexicographically smallest
/// tag; people whose events carry no tags get no label.
pub fn default_grouping<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    records: impl IntoIterator<Item = &'a ParticipationRecord>,
) -> HashMap<PersonId, String> {
    let tags_of: HashMap<&EventId, &BTreeSet<String>> = events.into_iter().map(|e| (&e.id, &e.tags)).collect();
    let mut tally: HashMap<&PersonId, BTreeMap<&String, u32>> = HashMap::new();
    for r in records {
        if r.state == crate::participation::RsvpState::None {
            continue;
        }
        if let Some(tags) = tags_of.get(&r.event_id) {
            let entry = tally.entry(&r.person_id).or_default();
            for t in tags.iter() {
                *entry.entry(t).or_insert(0) += 1;
            }
        }
    }
    tally
        .into_iter()
        .filter_map(|(p, counts)| {
            // max_by_key keeps the last max; iterate reversed so the smallest tag wins ties
            let best = counts.iter().rev().max_by_key(|(_, c)| **c).map(|(t, _)| (*t).clone())?;
            Some((p.clone(), best))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgePrompt {
    pub event_id: EventId,
    pub start: DateTime<Utc>,
    pub score: f64,
}

/// Ranks upcoming events by how mixed their current RSVPs are, descending,
/// ties broken by start time then id. This is an environment-level highlight:
/// it never pairs specific people. Events with no labeled RSVPs score 0.
pub fn bridge_prompt_ranking<'a>(
    upcoming: impl IntoIterator<Item = &'a Event>,
    records: impl IntoIterator<Item = &'a ParticipationRecord>,
    grouping: &HashMap<PersonId, String>,
    limit: usize,
) -> Vec<BridgePrompt> {
    let mut attendees: HashMap<&EventId, Vec<&PersonId>> = HashMap::new();
    for r in records {
        if r.state != crate::participation::RsvpState::None {
            attendees.entry(&r.event_id).or_default().push(&r.person_id);
        }
    }
    let mut ranked: Vec<BridgePrompt> = upcoming
        .into_iter()
        .map(|e| {
            let people = attendees.get(&e.id).map(Vec::as_slice).unwrap_or(&[]);
            let score = mixed_attendance_score(people.iter().copied(), grouping).unwrap_or(0.0);
            BridgePrompt { event_id: e.id.clone(), start: e.interval.start, score }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.start.cmp(&b.start))
            .then_with(|| a.event_id.cmp(&b.event_id))
    });
    ranked.truncate(limit);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::EventState;
    use crate::participation::{RsvpState, StateChange};
    use chrono::Duration;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn record(person: &str, event: &str, state: RsvpState) -> ParticipationRecord {
        let at = utc(2024, 6, 1, 0, 0);
        ParticipationRecord {
            person_id: PersonId::from(person),
            event_id: EventId::from(event),
            state,
            ticket_id: None,
            updated_at: at,
            state_history: vec![StateChange { state, at }],
        }
    }

    #[test]
    fn classification_by_snapshot() {
        let mut e = event("e", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        e.created_by_role_snapshot = Role::Participant;
        assert!(classify_self_organized(&e));
        e.created_by_role_snapshot = Role::Coordinator;
        assert!(!classify_self_organized(&e));
        e.created_by_role_snapshot = Role::Member;
        assert!(classify_self_organized(&e));
        e.created_by_role_snapshot = Role::Facilitator;
        assert!(!classify_self_organized(&e));
    }

    #[test]
    fn empty_log_is_all_zero() {
        let window = TimeInterval::new(utc(2024, 6, 1, 0, 0), utc(2024, 6, 8, 0, 0)).unwrap();
        let s = compute_deployment_stats([], [], &window, chrono_tz::UTC, StatsOptions::default());
        assert_eq!(s.events_total, 0);
        assert_eq!(s.self_organized_ratio, 0.0);
        assert_eq!(s.unique_participants, 0);
        assert_eq!(s.participation_instances, 0);
        assert_eq!(s.duration_days, 7);
    }

    #[test]
    fn duration_rounds_up_in_local_days() {
        let window = TimeInterval::new(utc(2024, 6, 1, 0, 0), utc(2024, 6, 3, 1, 0)).unwrap();
        assert_eq!(local_duration_days(&window, chrono_tz::UTC), 3);
        // Lisbon spring-forward day is 23 local hours long
        let tz = chrono_tz::Europe::Lisbon;
        let w = TimeInterval::new(utc(2024, 3, 31, 0, 0), utc(2024, 4, 1, 0, 0) - Duration::hours(1)).unwrap();
        assert_eq!(local_duration_days(&w, tz), 1);
    }

    /// Flat-scan recount used as the oracle for random logs.
    fn recount(events: &[Event], records: &[ParticipationRecord], window: &TimeInterval) -> (u64, u64, u64, u64, u64) {
        let mut total = 0;
        let mut selforg = 0;
        let mut hosts: Vec<&PersonId> = Vec::new();
        let mut counted: Vec<&EventId> = Vec::new();
        for e in events {
            if matches!(e.state, EventState::Published | EventState::Rescheduled)
                && e.interval.start >= window.start
                && e.interval.start < window.end
            {
                total += 1;
                if e.created_by_role_snapshot < Role::Facilitator {
                    selforg += 1;
                }
                if !hosts.contains(&&e.host_id) {
                    hosts.push(&e.host_id);
                }
                counted.push(&e.id);
            }
        }
        let mut people: Vec<&PersonId> = Vec::new();
        let mut inst = 0;
        for (i, r) in records.iter().enumerate() {
            let attending = r.state == RsvpState::Going || r.state == RsvpState::CheckedIn;
            let dup = records[..i].iter().any(|o| o.person_id == r.person_id && o.event_id == r.event_id
                && (o.state == RsvpState::Going || o.state == RsvpState::CheckedIn));
            if attending && counted.contains(&&r.event_id) {
                if !people.contains(&&r.person_id) {
                    people.push(&r.person_id);
                }
                if !dup {
                    inst += 1;
                }
            }
        }
        (total, selforg, hosts.len() as u64, people.len() as u64, inst)
    }

    fn random_log(rng: &mut StdRng, n_events: usize) -> (Vec<Event>, Vec<ParticipationRecord>) {
        let base = utc(2024, 6, 1, 0, 0);
        let roles = [Role::Participant, Role::Member, Role::Facilitator, Role::Coordinator];
        let events: Vec<Event> = (0..n_events)
            .map(|i| {
                let s = base + Duration::minutes(rng.random_range(-3000..40_000));
                let mut e = event(&format!("e{i}"), s, s + Duration::hours(1), "v");
                e.host_id = PersonId(format!("h{}", rng.random_range(0..40)));
                e.created_by_role_snapshot = roles[rng.random_range(0..4)];
                e.state = [EventState::Published, EventState::Rescheduled, EventState::Cancelled, EventState::Draft]
                    [rng.random_range(0..4)];
                e
            })
            .collect();
        let mut records = Vec::new();
        for e in &events {
            for p in 0..60 {
                if rng.random_bool(0.1) {
                    records.push(record(&format!("p{p}"), e.id.as_str(), RsvpState::ALL[rng.random_range(0..4)]));
                }
            }
        }
        (events, records)
    }

    #[test]
    fn random_log_matches_recount() {
        let mut rng = StdRng::seed_from_u64(31);
        let window = TimeInterval::new(utc(2024, 6, 1, 0, 0), utc(2024, 6, 28, 0, 0)).unwrap();
        for _ in 0..5 {
            let (events, mut records) = random_log(&mut rng, 300);
            let s = compute_deployment_stats(&events, &records, &window, chrono_tz::UTC, StatsOptions::default());
            let (total, selforg, hosts, people, inst) = recount(&events, &records, &window);
            assert_eq!(
                (s.events_total, s.self_organized_count, s.unique_hosts, s.unique_participants, s.participation_instances),
                (total, selforg, hosts, people, inst)
            );
            assert!((0.0..=1.0).contains(&s.self_organized_ratio));
            if s.unique_participants > 0 {
                assert!(s.participation_instances >= s.unique_participants);
            }
            records.shuffle(&mut rng);
            let mut shuffled_events = events.clone();
            shuffled_events.shuffle(&mut rng);
            let again = compute_deployment_stats(&shuffled_events, &records, &window, chrono_tz::UTC, StatsOptions::default());
            assert_eq!(s, again);
        }
    }

    #[test]
    fn co_hosts_counted_only_when_asked() {
        let window = TimeInterval::new(utc(2024, 6, 1, 0, 0), utc(2024, 6, 2, 0, 0)).unwrap();
        let mut e = event("e", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        e.co_hosts.insert(PersonId::from("co"));
        let plain = compute_deployment_stats([&e], [], &window, chrono_tz::UTC, StatsOptions::default());
        let with = compute_deployment_stats([&e], [], &window, chrono_tz::UTC, StatsOptions { include_co_hosts: true });
        assert_eq!((plain.unique_hosts, with.unique_hosts), (1, 2));
    }

    #[test]
    fn csv_has_table_columns() {
        let s = DeploymentStats {
            duration_days: 27,
            events_total: 133,
            self_organized_count: 126,
            self_organized_ratio: 126.0 / 133.0,
            unique_hosts: 40,
            unique_participants: 102,
            participation_instances: 915,
        };
        let text = stats_csv([("Shanhaiwoo", &s)]);
        assert_eq!(text, "Comm.,Dur. (d),Evts,Self-Org.,Hosts,Parts.,Part.-Instances\nShanhaiwoo,27,133,126,40,102,915\n");
    }

    #[test]
    fn graph_examples() {
        let recs = vec![
            record("a", "e1", RsvpState::Going),
            record("b", "e1", RsvpState::CheckedIn),
            record("c", "e2", RsvpState::Going),
            record("d", "e1", RsvpState::Starred),
        ];
        let g = co_attendance_graph(&recs);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.weight(&PersonId::from("b"), &PersonId::from("a")), 1);
        assert!(g.nodes.contains(&PersonId::from("c")));
        assert!(!g.nodes.contains(&PersonId::from("d")));
    }

    #[test]
    fn graph_matches_pair_counting() {
        let mut rng = StdRng::seed_from_u64(41);
        let (_, records) = random_log(&mut rng, 60);
        let g = co_attendance_graph(&records);
        let people: BTreeSet<PersonId> = records.iter().map(|r| r.person_id.clone()).collect();
        let events: BTreeSet<EventId> = records.iter().map(|r| r.event_id.clone()).collect();
        let attends = |p: &PersonId, e: &EventId| {
            records.iter().any(|r| &r.person_id == p && &r.event_id == e && r.state.is_attending())
        };
        let list: Vec<&PersonId> = people.iter().collect();
        let mut edges = 0;
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                let w = events.iter().filter(|e| attends(a, e) && attends(b, e)).count() as u32;
                assert_eq!(g.weight(a, b), w);
                if w > 0 {
                    edges += 1;
                }
            }
            assert_eq!(g.weight(a, a), 0);
        }
        assert_eq!(g.edges.len(), edges);
        assert!(g.edges.values().all(|w| *w >= 1));
    }

    fn grouping(pairs: &[(&str, &str)]) -> HashMap<PersonId, String> {
        pairs.iter().map(|(p, g)| (PersonId::from(*p), g.to_string())).collect()
    }

    fn ids(names: &[&str]) -> Vec<PersonId> {
        names.iter().map(|n| PersonId::from(*n)).collect()
    }

    #[test]
    fn entropy_extremes_and_three_to_one() {
        let g = grouping(&[("a", "x"), ("b", "y"), ("c", "z"), ("d", "x"), ("e", "y"), ("f", "z")]);
        assert_eq!(mixed_attendance_score(&ids(&["a", "b", "c", "d", "e", "f"]), &g), Ok(1.0));
        assert_eq!(mixed_attendance_score(&ids(&["a", "d"]), &g), Ok(0.0));

        let g2 = grouping(&[("a", "x"), ("b", "x"), ("c", "x"), ("d", "y")]);
        let s = mixed_attendance_score(&ids(&["a", "b", "c", "d"]), &g2).unwrap();
        let oracle = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.8113).abs() < 1e-4);

        let solo = grouping(&[("a", "x")]);
        assert_eq!(mixed_attendance_score(&ids(&["a"]), &solo), Ok(0.0));
        assert_eq!(mixed_attendance_score(&ids(&["zz"]), &solo), Err(AnalyticsError::NoLabeledAttendees));
    }

    #[test]
    fn entropy_invariant_under_renaming_and_permutation() {
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..200 {
            let n = rng.random_range(1..30);
            let pairs: Vec<(String, String)> =
                (0..n).map(|i| (format!("p{i}"), format!("g{}", rng.random_range(0..5)))).collect();
            let g: HashMap<PersonId, String> = pairs.iter().map(|(p, l)| (PersonId(p.clone()), l.clone())).collect();
            let renamed: HashMap<PersonId, String> =
                pairs.iter().map(|(p, l)| (PersonId(p.clone()), format!("renamed-{l}"))).collect();
            let mut people: Vec<PersonId> = pairs.iter().map(|(p, _)| PersonId(p.clone())).collect();
            let a = mixed_attendance_score(&people, &g).unwrap();
            people.shuffle(&mut rng);
            let b = mixed_attendance_score(&people, &renamed).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn bridge_ranking_orders_by_score_then_start() {
        let ea = event("a", utc(2024, 6, 2, 10, 0), utc(2024, 6, 2, 11, 0), "v");
        let eb = event("b", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        let g = grouping(&[("p1", "x"), ("p2", "y"), ("p3", "x"), ("p4", "x")]);
        let recs = vec![
            record("p1", "a", RsvpState::Going),
            record("p2", "a", RsvpState::Starred),
            record("p3", "b", RsvpState::Going),
            record("p4", "b", RsvpState::Going),
        ];
        let ranked = bridge_prompt_ranking([&ea, &eb], &recs, &g, 10);
        assert_eq!(ranked.iter().map(|r| r.event_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(ranked[0].score, 1.0);

        let single = bridge_prompt_ranking([&eb], &recs, &g, 10);
        assert_eq!(single.len(), 1);
        assert_eq!(bridge_prompt_ranking([&ea, &eb], &recs, &g, 1).len(), 1);
    }

    #[test]
    fn bridge_ranking_matches_sorted_oracle_scores() {
        let mut rng = StdRng::seed_from_u64(47);
        let base = utc(2024, 6, 1, 0, 0);
        let events: Vec<Event> = (0..40)
            .map(|i| {
                let s = base + Duration::hours(rng.random_range(0..100));
                event(&format!("e{i:02}"), s, s + Duration::hours(1), "v")
            })
            .collect();
        let g: HashMap<PersonId, String> =
            (0..50).map(|p| (PersonId(format!("p{p}")), format!("g{}", p % 4))).collect();
        let mut recs = Vec::new();
        for e in &events {
            for p in 0..50 {
                if rng.random_bool(0.08) {
                    recs.push(record(&format!("p{p}"), e.id.as_str(), RsvpState::Going));
                }
            }
        }
        let ranked = bridge_prompt_ranking(&events, &recs, &g, 100);
        // oracle: entropy in log base k over counts, computed directly
        let k = 4f64;
        let mut oracle: Vec<(f64, DateTime<Utc>, EventId)> = events
            .iter()
            .map(|e| {
                let mut counts = [0f64; 4];
                for r in recs.iter().filter(|r| r.event_id == e.id) {
                    let idx: usize = g[&r.person_id][1..].parse().unwrap();
                    counts[idx] += 1.0;
                }
                let n: f64 = counts.iter().sum();
                let h = if n == 0.0 {
                    0.0
                } else {
                    counts.iter().filter(|c| **c > 0.0).map(|c| -(c / n) * (c / n).log(k)).sum()
                };
                (h, e.interval.start, e.id.clone())
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (got, want) in ranked.iter().zip(&oracle) {
            assert!((got.score - want.0).abs() < 1e-9);
        }
        let got_ids: Vec<&EventId> = ranked.iter().map(|r| &r.event_id).collect();
        let want_ids: Vec<&EventId> = oracle.iter().map(|o| &o.2).collect();
        // identical ordering except where oracle scores tie within float noise
        for (i, (g, w)) in got_ids.iter().zip(&want_ids).enumerate() {
            if g != w {
                assert!((ranked[i].score - oracle[i].0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_grouping_picks_most_frequent_tag() {
        let mut e1 = event("e1", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        e1.tags = ["art".to_string(), "food".to_string()].into();
        let mut e2 = event("e2", utc(2024, 6, 1, 12, 0), utc(2024, 6, 1, 13, 0), "v");
        e2.tags = ["food".to_string()].into();
        let recs = vec![
            record("p", "e1", RsvpState::Going),
            record("p", "e2", RsvpState::Starred),
            record("q", "e1", RsvpState::Going),
        ];
        let g = default_grouping([&e1, &e2], &recs);
        assert_eq!(g[&PersonId::from("p")], "food");
        // tie between art and food resolves to art
        assert_eq!(g[&PersonId::from("q")], "art");
    }
}
