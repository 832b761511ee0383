//! Venue conflict detection, opening-hours evaluation, rescheduling, and the
//! schedule and map projections.
//!
//! Every ordering tie-breaks on event id, so projections over the same
//! snapshot are byte-identical.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Bound;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Offset, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    nanos_of_day, Day, Event, EventChange, EventId, EventState, HistoryEntry, Location, PersonId, ProgramId,
    TimeInterval, Venue, VenueId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    VenueOverlap,
    OutsideOpeningHours,
    OutsideAvailability,
    ProgramRestriction,
    CapacityExceeded,
}

/// A reason a draft's placement is problematic. `VenueOverlap` always names
/// the event it collides with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub conflicting_event_id: Option<EventId>,
    pub detail: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulingError {
    #[error("unknown venue {0}")]
    UnknownVenue(VenueId),
}

/// True iff the half-open intervals share at least one instant.
pub fn intervals_overlap(a: &TimeInterval, b: &TimeInterval) -> bool {
    a.start < b.end && b.start < a.end
}

/// A stretch of an interval that falls on one local date under one UTC offset,
/// expressed as local nanoseconds-of-day `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LocalPiece {
    date: NaiveDate,
    start: i64,
    end: i64,
}

fn offset_secs(tz: Tz, at: DateTime<Utc>) -> i32 {
    tz.offset_from_utc_datetime(&at.naive_utc()).fix().local_minus_utc()
}

/// First instant in `(lo, hi]` whose offset differs from the offset at `lo`.
/// Offsets change on whole seconds.
fn next_transition(tz: Tz, lo: DateTime<Utc>, hi: DateTime<Utc>) -> DateTime<Utc> {
    let base = offset_secs(tz, lo);
    let mut l = lo.timestamp();
    let mut h = hi.timestamp();
    if offset_secs(tz, Utc.timestamp_opt(h, 0).unwrap()) == base {
        h += 1;
    }
    while h - l > 1 {
        let mid = l + (h - l) / 2;
        if offset_secs(tz, Utc.timestamp_opt(mid, 0).unwrap()) == base {
            l = mid;
        } else {
            h = mid;
        }
    }
    Utc.timestamp_opt(h, 0).unwrap()
}

/// Splits an interval into local-date, constant-offset pieces so wall-clock
/// checks hold across midnight and DST changes.
fn local_pieces(interval: &TimeInterval, tz: Tz) -> Vec<LocalPiece> {
    let mut pieces = Vec::new();
    let mut cur = interval.start;
    while cur < interval.end {
        let offset = Duration::seconds(i64::from(offset_secs(tz, cur)));
        let local = cur.naive_utc() + offset;
        let next_midnight = (local.date() + Duration::days(1)).and_hms_opt(0, 0, 0).unwrap();
        let mut piece_end = (next_midnight - offset).and_utc().min(interval.end);
        let last = piece_end - Duration::nanoseconds(1);
        if offset_secs(tz, last) != offset_secs(tz, cur) {
            piece_end = next_transition(tz, cur, last);
        }
        let start = nanos_of_day(local.time());
        pieces.push(LocalPiece { date: local.date(), start, end: start + (piece_end - cur).num_nanoseconds().unwrap() });
        cur = piece_end;
    }
    pieces
}

fn within_availability(venue: &Venue, pieces: &[LocalPiece]) -> bool {
    venue.availability_windows.is_empty()
        || pieces.iter().all(|p| venue.availability_windows.iter().any(|w| w.contains(p.date)))
}

fn within_opening_hours(venue: &Venue, pieces: &[LocalPiece]) -> bool {
    if venue.opening_hours.is_always_open() {
        return true;
    }
    pieces.iter().all(|p| {
        let mut covered_to = p.start;
        for span in venue.opening_hours.spans(Day::from(p.date.weekday())) {
            if span.start_nanos() <= covered_to && span.end_nanos() > covered_to {
                covered_to = span.end_nanos();
            }
            if covered_to >= p.end {
                return true;
            }
        }
        covered_to >= p.end
    })
}

/// True iff every local instant of `interval` lies inside an availability
/// window (none = unrestricted) and inside the weekly opening hours (empty =
/// always open).
pub fn venue_open_during(venue: &Venue, interval: &TimeInterval, tz: Tz) -> bool {
    let pieces = local_pieces(interval, tz);
    within_availability(venue, &pieces) && within_opening_hours(venue, &pieces)
}

#[derive(Debug, Clone, Default)]
struct VenueBookings {
    by_start: BTreeMap<(DateTime<Utc>, EventId), DateTime<Utc>>,
    longest: Duration,
}

/// Live bookings keyed by venue, ordered by start. Overlap queries only visit
/// bookings that start within the longest booking length before the query.
#[derive(Debug, Clone, Default)]
pub struct BookingIndex {
    venues: HashMap<VenueId, VenueBookings>,
}

impl BookingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an index of every live event booked at a registered venue.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a Event>) -> Self {
        let mut index = Self::new();
        for e in events {
            index.insert(e);
        }
        index
    }

    /// Adds `event` if it is live and placed at a venue. Anything else is ignored.
    pub fn insert(&mut self, event: &Event) {
        let Some(venue) = event.location.venue_id() else { return };
        if !event.state.is_live() {
            return;
        }
        let slot = self.venues.entry(venue.clone()).or_default();
        slot.longest = slot.longest.max(event.interval.duration());
        slot.by_start.insert((event.interval.start, event.id.clone()), event.interval.end);
    }

    pub fn remove(&mut self, event: &Event) {
        let Some(venue) = event.location.venue_id() else { return };
        if let Some(slot) = self.venues.get_mut(venue) {
            slot.by_start.remove(&(event.interval.start, event.id.clone()));
        }
    }

    /// Bookings at `venue` overlapping `interval`, ordered by `(start, id)`.
    pub fn overlapping<'a>(
        &'a self,
        venue: &VenueId,
        interval: &'a TimeInterval,
    ) -> impl Iterator<Item = (&'a EventId, TimeInterval)> + 'a {
        let slot = self.venues.get(venue);
        slot.into_iter().flat_map(move |slot| {
            let lower = (interval.start - slot.longest, EventId(String::new()));
            let upper = (interval.end, EventId(String::new()));
            slot.by_start
                .range((Bound::Included(lower), Bound::Excluded(upper)))
                .filter(move |(_, end)| **end > interval.start)
                .map(|((start, id), end)| (id, TimeInterval { start: *start, end: *end }))
        })
    }
}

/// Largest number of intervals simultaneously active at any instant.
fn max_concurrency(intervals: &[TimeInterval]) -> usize {
    let mut edges: Vec<(DateTime<Utc>, i32)> = intervals
        .iter()
        .flat_map(|iv| [(iv.start, 1), (iv.end, -1)])
        .collect();
    // ends sort before starts at the same instant: half-open
    edges.sort();
    let mut active = 0i32;
    let mut peak = 0i32;
    for (_, delta) in edges {
        active += delta;
        peak = peak.max(active);
    }
    peak as usize
}

/// Conflict evaluation against a fixed snapshot of venues and bookings.
#[derive(Debug)]
pub struct ConflictChecker<'a> {
    venues: HashMap<&'a VenueId, &'a Venue>,
    index: &'a BookingIndex,
    tz: Tz,
}

impl<'a> ConflictChecker<'a> {
    pub fn new(venues: impl IntoIterator<Item = &'a Venue>, index: &'a BookingIndex, tz: Tz) -> Self {
        Self { venues: venues.into_iter().map(|v| (&v.id, v)).collect(), index, tz }
    }

    /// Conflicts for `draft`, sorted by kind then conflicting event id. The
    /// draft's own id is never reported against itself. Free-text locations
    /// yield no conflicts.
    pub fn check(&self, draft: &Event) -> Result<Vec<Conflict>, SchedulingError> {
        let Some(venue_id) = draft.location.venue_id() else {
            return Ok(Vec::new());
        };
        let venue = *self.venues.get(venue_id).ok_or_else(|| SchedulingError::UnknownVenue(venue_id.clone()))?;
        let mut conflicts = Vec::new();

        let others: Vec<(&EventId, TimeInterval)> = self
            .index
            .overlapping(venue_id, &draft.interval)
            .filter(|(id, _)| **id != draft.id)
            .collect();
        if venue.shareable {
            if let Some(cap) = venue.capacity {
                let mut clipped: Vec<TimeInterval> = others
                    .iter()
                    .map(|(_, iv)| TimeInterval {
                        start: iv.start.max(draft.interval.start),
                        end: iv.end.min(draft.interval.end),
                    })
                    .collect();
                clipped.push(draft.interval);
                let peak = max_concurrency(&clipped);
                if peak > cap.get() as usize {
                    conflicts.push(Conflict {
                        kind: ConflictKind::CapacityExceeded,
                        conflicting_event_id: None,
                        detail: format!("{peak} concurrent events at {}, capacity {cap}", venue.name),
                    });
                }
            }
        } else {
            for (id, _) in &others {
                conflicts.push(Conflict {
                    kind: ConflictKind::VenueOverlap,
                    conflicting_event_id: Some((*id).clone()),
                    detail: format!("{} is already booked", venue.name),
                });
            }
        }

        let pieces = local_pieces(&draft.interval, self.tz);
        if !within_opening_hours(venue, &pieces) {
            conflicts.push(Conflict {
                kind: ConflictKind::OutsideOpeningHours,
                conflicting_event_id: None,
                detail: format!("{} is closed for part of the requested time", venue.name),
            });
        }
        if !within_availability(venue, &pieces) {
            conflicts.push(Conflict {
                kind: ConflictKind::OutsideAvailability,
                conflicting_event_id: None,
                detail: format!("{} is not available on every requested date", venue.name),
            });
        }
        if !venue.restricted_to_programs.is_empty()
            && !draft.program_id.as_ref().is_some_and(|p| venue.restricted_to_programs.contains(p))
        {
            conflicts.push(Conflict {
                kind: ConflictKind::ProgramRestriction,
                conflicting_event_id: None,
                detail: format!("{} is reserved for specific programs", venue.name),
            });
        }
        conflicts.sort_by(|a, b| (a.kind, &a.conflicting_event_id).cmp(&(b.kind, &b.conflicting_event_id)));
        Ok(conflicts)
    }
}

/// One-shot conflict check against `existing` events. Cancelled and draft
/// events do not occupy venues.
pub fn check_event_conflicts(
    draft: &Event,
    existing: &[Event],
    venues: &[Venue],
    tz: Tz,
) -> Result<Vec<Conflict>, SchedulingError> {
    let index = BookingIndex::from_events(existing);
    ConflictChecker::new(venues, &index, tz).check(draft)
}

/// Requested move. At least one field should be set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescheduleRequest {
    pub new_interval: Option<TimeInterval>,
    pub new_location: Option<Location>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RescheduleOutcome {
    /// Event moved; the conflicts listed are advisory.
    Applied { event: Event, conflicts: Vec<Conflict> },
    /// Nothing changed.
    Blocked { conflicts: Vec<Conflict> },
}

/// Computes the moved event and decides whether any conflict blocks the move.
/// Permission and revision checks belong to the caller's transaction.
pub fn plan_reschedule(
    event: &Event,
    request: &RescheduleRequest,
    checker: &ConflictChecker<'_>,
    blocking: &BTreeSet<ConflictKind>,
    actor: &PersonId,
    now: DateTime<Utc>,
) -> Result<RescheduleOutcome, SchedulingError> {
    let mut moved = event.clone();
    if let Some(iv) = request.new_interval {
        moved.interval = iv;
    }
    if let Some(loc) = &request.new_location {
        moved.location = loc.clone();
    }
    let conflicts = checker.check(&moved)?;
    if conflicts.iter().any(|c| blocking.contains(&c.kind)) {
        return Ok(RescheduleOutcome::Blocked { conflicts });
    }
    moved.state = EventState::Rescheduled;
    moved.revision = event.revision + 1;
    moved.history.push(HistoryEntry {
        revision: moved.revision,
        at: now,
        actor: actor.clone(),
        change: EventChange::Rescheduled { from_interval: event.interval, from_location: event.location.clone() },
    });
    Ok(RescheduleOutcome::Applied { event: moved, conflicts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Compact,
    List,
    Venue,
    Weekly,
}

/// Projection filter. Empty sets mean "no constraint"; tag filters match an
/// event carrying any listed tag. Dates are community-local start dates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleFilter {
    pub tags: BTreeSet<String>,
    pub venues: BTreeSet<VenueId>,
    pub programs: BTreeSet<ProgramId>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

fn local_date(at: DateTime<Utc>, tz: Tz) -> NaiveDate {
    at.with_timezone(&tz).date_naive()
}

impl ScheduleFilter {
    pub fn matches(&self, event: &Event, tz: Tz) -> bool {
        if !self.tags.is_empty() && self.tags.is_disjoint(&event.tags) {
            return false;
        }
        if !self.venues.is_empty() && !event.location.venue_id().is_some_and(|v| self.venues.contains(v)) {
            return false;
        }
        if !self.programs.is_empty() && !event.program_id.as_ref().is_some_and(|p| self.programs.contains(p)) {
            return false;
        }
        let day = local_date(event.interval.start, tz);
        self.from.is_none_or(|f| day >= f) && self.to.is_none_or(|t| day <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSummary {
    pub id: EventId,
    pub title: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// Wall-clock start in the community timezone.
    pub local_start: NaiveDateTime,
    pub location: Location,
    pub venue_name: Option<String>,
    pub tags: BTreeSet<String>,
    pub host_id: PersonId,
    pub program_id: Option<ProgramId>,
    pub state: EventState,
    pub revision: u64,
}

impl EventSummary {
    pub fn of(event: &Event, venues: &HashMap<&VenueId, &Venue>, tz: Tz) -> Self {
        Self {
            id: event.id.clone(),
            title: event.title.clone(),
            start: event.interval.start,
            end: event.interval.end,
            local_start: event.interval.start.with_timezone(&tz).naive_local(),
            location: event.location.clone(),
            venue_name: event.location.venue_id().and_then(|v| venues.get(v)).map(|v| v.name.clone()),
            tags: event.tags.clone(),
            host_id: event.host_id.clone(),
            program_id: event.program_id.clone(),
            state: event.state,
            revision: event.revision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketKey {
    All,
    Date(NaiveDate),
    Venue(VenueId),
    /// Free-text location, in venue mode.
    Location(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub key: BucketKey,
    pub events: Vec<EventSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleView {
    pub mode: ViewMode,
    pub buckets: Vec<Bucket>,
    pub generated_for: ScheduleFilter,
}

/// Groups live events matching `filter` into buckets for `mode`:
///
/// * compact / list: one bucket (none when empty), sorted by `(start, id)`.
/// * venue: one bucket per venue or free-text location.
/// * weekly: one bucket per local date of the requested range; seven days when
///   only `from` is given. Multi-day events sit in their start day's bucket.
///
/// Every matching event lands in exactly one bucket.
pub fn project_schedule(events: &[Event], venues: &[Venue], tz: Tz, filter: &ScheduleFilter, mode: ViewMode) -> ScheduleView {
    let venue_map: HashMap<&VenueId, &Venue> = venues.iter().map(|v| (&v.id, v)).collect();
    let mut matching: Vec<&Event> = events.iter().filter(|e| e.state.is_live() && filter.matches(e, tz)).collect();
    matching.sort_by(|a, b| (a.interval.start, &a.id).cmp(&(b.interval.start, &b.id)));
    let summaries = matching.iter().map(|e| EventSummary::of(e, &venue_map, tz));

    let buckets = match mode {
        ViewMode::Compact | ViewMode::List => {
            let events: Vec<EventSummary> = summaries.collect();
            if events.is_empty() {
                Vec::new()
            } else {
                vec![Bucket { key: BucketKey::All, events }]
            }
        }
        ViewMode::Venue => {
            let mut grouped: BTreeMap<BucketKey, Vec<EventSummary>> = BTreeMap::new();
            for s in summaries {
                let key = match &s.location {
                    Location::Venue(v) => BucketKey::Venue(v.clone()),
                    Location::Text(t) => BucketKey::Location(t.clone()),
                };
                grouped.entry(key).or_default().push(s);
            }
            grouped.into_iter().map(|(key, events)| Bucket { key, events }).collect()
        }
        ViewMode::Weekly => {
            let mut grouped: BTreeMap<NaiveDate, Vec<EventSummary>> = BTreeMap::new();
            for s in summaries {
                grouped.entry(local_date(s.start, tz)).or_default().push(s);
            }
            let range = match (filter.from, filter.to) {
                (Some(f), Some(t)) => Some((f, t)),
                (Some(f), None) => Some((f, f + Duration::days(6))),
                (None, Some(t)) => Some((t - Duration::days(6), t)),
                (None, None) => grouped
                    .keys()
                    .next()
                    .copied()
                    .zip(grouped.keys().next_back().copied()),
            };
            match range {
                Some((first, last)) => first
                    .iter_days()
                    .take_while(|d| *d <= last)
                    .map(|d| Bucket { key: BucketKey::Date(d), events: grouped.remove(&d).unwrap_or_default() })
                    .collect(),
                None => Vec::new(),
            }
        }
    };
    ScheduleView { mode, buckets, generated_for: filter.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalStatus {
    Ongoing,
    Upcoming,
    Past,
}

impl TemporalStatus {
    pub fn of(interval: &TimeInterval, now: DateTime<Utc>) -> Self {
        if interval.contains(now) {
            TemporalStatus::Ongoing
        } else if now < interval.start {
            TemporalStatus::Upcoming
        } else {
            TemporalStatus::Past
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPin {
    pub event: EventSummary,
    pub lat: f64,
    pub lon: f64,
    pub temporal_status: TemporalStatus,
}

/// Geolocated live events matching `filter`, sorted by `(status, start, id)`.
/// Events at venues without coordinates, or at free-text places, are left out.
pub fn project_map(events: &[Event], venues: &[Venue], tz: Tz, filter: &ScheduleFilter, now: DateTime<Utc>) -> Vec<MapPin> {
    let venue_map: HashMap<&VenueId, &Venue> = venues.iter().map(|v| (&v.id, v)).collect();
    let mut pins: Vec<MapPin> = events
        .iter()
        .filter(|e| e.state.is_live() && filter.matches(e, tz))
        .filter_map(|e| {
            let geo = e.location.venue_id().and_then(|v| venue_map.get(v)).and_then(|v| v.geo)?;
            Some(MapPin {
                event: EventSummary::of(e, &venue_map, tz),
                lat: geo.lat,
                lon: geo.lon,
                temporal_status: TemporalStatus::of(&e.interval, now),
            })
        })
        .collect();
    pins.sort_by(|a, b| {
        (a.temporal_status, a.event.start, &a.event.id).cmp(&(b.temporal_status, b.event.start, &b.event.id))
    });
    pins
}
