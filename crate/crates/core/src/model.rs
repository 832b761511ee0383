//! Domain types shared by every module, plus the validation rules that guard
//! what may be stored.
//!
//! All instants are UTC. A community's timezone is consulted only when
//! projecting to local dates or wall-clock hours. Intervals are half-open
//! `[start, end)`, so back-to-back bookings never collide.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::num::NonZeroU32;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc, Weekday};
use chrono_tz::Tz;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{BoundaryPolicy, Role};
use crate::scheduling::ConflictKind;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            /// Mints a fresh random identifier.
            pub fn random() -> Self {
                Self(uuid::Uuid::new_v4().simple().to_string())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(CommunityId);
id_type!(ProgramId);
id_type!(VenueId);
id_type!(EventId);
id_type!(
    /// Identity of a resident. Persons are global; memberships tie them to communities.
    PersonId
);
id_type!(TicketId);
id_type!(BadgeId);
id_type!(InvitationId);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("interval start must be strictly before end")]
    EmptyInterval,
    #[error("date range ends ({end}) before it starts ({start})")]
    InvertedRange { start: NaiveDate, end: NaiveDate },
    #[error("opening-hours span must satisfy start < end within one day")]
    InvalidHoursSpan,
    #[error("opening-hours spans for {0:?} overlap")]
    OverlappingHours(Day),
    #[error("latitude/longitude out of range")]
    InvalidGeo,
    #[error("display name must not be empty")]
    EmptyDisplayName,
}

/// Half-open UTC interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeInterval {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, ModelError> {
        let interval = Self { start, end };
        if interval.is_valid() {
            Ok(interval)
        } else {
            Err(ModelError::EmptyInterval)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.start < self.end
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }

    /// Half-open membership test.
    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.start <= at && at < self.end
    }
}

/// Inclusive range of community-local calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, ModelError> {
        if end < start {
            return Err(ModelError::InvertedRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Sorts, merges overlapping or adjacent ranges, and returns a pairwise
/// disjoint list. Fails on any range whose end precedes its start.
pub fn canonicalize_windows(windows: &[DateRange]) -> Result<Vec<DateRange>, ModelError> {
    if let Some(bad) = windows.iter().find(|w| w.end < w.start) {
        return Err(ModelError::InvertedRange { start: bad.start, end: bad.end });
    }
    let mut sorted = windows.to_vec();
    sorted.sort();
    let mut merged: Vec<DateRange> = Vec::with_capacity(sorted.len());
    for w in sorted {
        match merged.last_mut() {
            // adjacency counts: Jun 10 and Jun 11 touch
            Some(last) if w.start <= last.end.succ_opt().unwrap_or(last.end) => {
                last.end = last.end.max(w.end);
            }
            _ => merged.push(w),
        }
    }
    Ok(merged)
}

/// Weekday key for opening hours. Ordered Monday first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Day {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl From<Weekday> for Day {
    fn from(w: Weekday) -> Self {
        match w {
            Weekday::Mon => Day::Mon,
            Weekday::Tue => Day::Tue,
            Weekday::Wed => Day::Wed,
            Weekday::Thu => Day::Thu,
            Weekday::Fri => Day::Fri,
            Weekday::Sat => Day::Sat,
            Weekday::Sun => Day::Sun,
        }
    }
}

/// Local wall-clock span within a single day, `[start, end)`. An `end` of
/// `00:00` means midnight at the end of the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoursSpan {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

pub(crate) const NANOS_PER_DAY: i64 = 86_400 * 1_000_000_000;

pub(crate) fn nanos_of_day(t: NaiveTime) -> i64 {
    use chrono::Timelike;
    i64::from(t.num_seconds_from_midnight()) * 1_000_000_000 + i64::from(t.nanosecond().min(999_999_999))
}

impl HoursSpan {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Result<Self, ModelError> {
        let span = Self { start, end };
        if span.start_nanos() < span.end_nanos() {
            Ok(span)
        } else {
            Err(ModelError::InvalidHoursSpan)
        }
    }

    pub(crate) fn start_nanos(&self) -> i64 {
        nanos_of_day(self.start)
    }

    pub(crate) fn end_nanos(&self) -> i64 {
        match nanos_of_day(self.end) {
            0 => NANOS_PER_DAY,
            n => n,
        }
    }
}

/// Weekly opening hours. An empty map means always open; a weekday missing
/// from a non-empty map is closed that day.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeeklyHours(pub BTreeMap<Day, Vec<HoursSpan>>);

impl WeeklyHours {
    pub fn always_open() -> Self {
        Self::default()
    }

    pub fn is_always_open(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spans(&self, day: Day) -> &[HoursSpan] {
        self.0.get(&day).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sorts each day's spans and rejects malformed or overlapping ones.
    pub fn normalized(mut self) -> Result<Self, ModelError> {
        for (day, spans) in self.0.iter_mut() {
            spans.sort_by_key(|s| (s.start_nanos(), s.end_nanos()));
            if spans.iter().any(|s| s.start_nanos() >= s.end_nanos()) {
                return Err(ModelError::InvalidHoursSpan);
            }
            if spans.windows(2).any(|w| w[1].start_nanos() < w[0].end_nanos()) {
                return Err(ModelError::OverlappingHours(*day));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geo {
    pub lat: f64,
    pub lon: f64,
}

impl Geo {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        let geo = Self { lat, lon };
        if geo.is_valid() {
            Ok(geo)
        } else {
            Err(ModelError::InvalidGeo)
        }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    MembersOnly,
    Unlisted,
}

impl Visibility {
    pub const ALL: [Visibility; 3] = [Visibility::Public, Visibility::MembersOnly, Visibility::Unlisted];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunitySettings {
    pub default_event_visibility: Visibility,
    pub allowed_visibilities: BTreeSet<Visibility>,
    pub who_can_create_events: Role,
    pub who_can_create_venues: Role,
    pub rsvp_required_default: bool,
    /// Minutes; 0 means unlimited.
    pub max_event_duration: u32,
    /// Conflict kinds that reject a create or reschedule. The rest are advisory.
    pub blocking_conflicts: BTreeSet<ConflictKind>,
    /// Minutes a check-in token stays valid after its event ends.
    pub checkin_grace_minutes: u32,
}

impl Default for CommunitySettings {
    fn default() -> Self {
        Self {
            default_event_visibility: Visibility::Public,
            allowed_visibilities: Visibility::ALL.into_iter().collect(),
            who_can_create_events: Role::Participant,
            who_can_create_venues: Role::Facilitator,
            rsvp_required_default: false,
            max_event_duration: 0,
            blocking_conflicts: [ConflictKind::VenueOverlap].into_iter().collect(),
            checkin_grace_minutes: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkOrigin {
    pub community_id: CommunityId,
    pub content_hash: String,
}

/// Root aggregate of a deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: CommunityId,
    /// Survives export and import; a fork starts a new lineage.
    pub lineage_id: CommunityId,
    pub name: String,
    pub timezone: Tz,
    pub boundary_policy: BoundaryPolicy,
    pub settings: CommunitySettings,
    pub created_at: DateTime<Utc>,
    pub forked_from: Option<ForkOrigin>,
    /// Read-only events carried over from the deployment this one was forked from.
    #[serde(default)]
    pub archive: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub id: ProgramId,
    pub community_id: CommunityId,
    pub title: String,
    /// `None` after a fork until the program is re-dated.
    pub interval: Option<TimeInterval>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub id: VenueId,
    pub community_id: CommunityId,
    pub name: String,
    pub description: String,
    pub geo: Option<Geo>,
    /// `None` = unlimited. For shareable venues this bounds concurrent events.
    pub capacity: Option<NonZeroU32>,
    pub amenities: BTreeSet<String>,
    /// Empty = no date restriction.
    pub availability_windows: Vec<DateRange>,
    pub opening_hours: WeeklyHours,
    /// Empty = available to every program.
    pub restricted_to_programs: BTreeSet<ProgramId>,
    pub shareable: bool,
}

impl Venue {
    /// Canonicalizes windows and hours, rejecting malformed ones.
    pub fn normalized(mut self) -> Result<Self, ModelError> {
        self.availability_windows = canonicalize_windows(&self.availability_windows)?;
        self.opening_hours = self.opening_hours.normalized()?;
        if let Some(geo) = &self.geo {
            if !geo.is_valid() {
                return Err(ModelError::InvalidGeo);
            }
        }
        Ok(self)
    }
}

/// The "where" of an event: a registered venue or free text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Venue(VenueId),
    Text(String),
}

impl Location {
    pub fn venue_id(&self) -> Option<&VenueId> {
        match self {
            Location::Venue(id) => Some(id),
            Location::Text(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Location::Venue(id) => id.0.trim().is_empty(),
            Location::Text(t) => t.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsvpMode {
    OpenDropIn,
    RsvpTracked,
    Ticketed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    Draft,
    Published,
    Rescheduled,
    Cancelled,
}

impl EventState {
    /// Published or rescheduled: occupies its venue and shows in projections.
    pub fn is_live(self) -> bool {
        matches!(self, EventState::Published | EventState::Rescheduled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventChange {
    Created,
    Rescheduled {
        from_interval: TimeInterval,
        from_location: Location,
    },
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub revision: u64,
    pub at: DateTime<Utc>,
    pub actor: PersonId,
    pub change: EventChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub community_id: CommunityId,
    pub title: String,
    pub interval: TimeInterval,
    pub location: Location,
    pub host_id: PersonId,
    pub co_hosts: BTreeSet<PersonId>,
    pub speakers: Vec<String>,
    pub tags: BTreeSet<String>,
    pub program_id: Option<ProgramId>,
    pub visibility: Visibility,
    pub rsvp_mode: RsvpMode,
    pub checkin_enabled: bool,
    pub state: EventState,
    pub revision: u64,
    pub created_at: DateTime<Utc>,
    pub created_by_role_snapshot: Role,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl Event {
    pub fn is_hosted_by(&self, person: &PersonId) -> bool {
        &self.host_id == person || self.co_hosts.contains(person)
    }
}

/// Opaque credential handed to a verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialDescriptor {
    pub scheme: String,
    /// base64url of the raw credential bytes.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub id: PersonId,
    pub display_name: String,
    pub profile: String,
    pub credential_refs: Vec<CredentialDescriptor>,
}

impl Person {
    pub fn new(display_name: impl Into<String>) -> Result<Self, ModelError> {
        let display_name = display_name.into();
        if display_name.trim().is_empty() {
            return Err(ModelError::EmptyDisplayName);
        }
        Ok(Self {
            id: PersonId::random(),
            display_name,
            profile: String::new(),
            credential_refs: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Price {
    pub amount: Decimal,
    /// ISO 4217 code.
    pub currency: String,
}

impl Price {
    pub fn free() -> Self {
        Self { amount: Decimal::ZERO, currency: "USD".into() }
    }

    pub fn is_free(&self) -> bool {
        self.amount.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: TicketId,
    pub event_id: EventId,
    pub price: Price,
    /// Name of the badge a claimant must hold.
    pub required_badge: Option<String>,
    /// `None` = unlimited.
    pub quantity: Option<NonZeroU32>,
    pub claimed: u32,
}

impl Ticket {
    pub fn remaining(&self) -> Option<u32> {
        self.quantity.map(|q| q.get().saturating_sub(self.claimed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Badge {
    pub id: BadgeId,
    pub community_id: CommunityId,
    pub name: String,
    pub issued_to: PersonId,
    pub issued_for: Option<EventId>,
    pub issued_at: DateTime<Utc>,
}

/// One reason a draft cannot be stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingWhat,
    MissingWhere,
    EmptyInterval,
    TooLong { max_minutes: u32, actual_minutes: i64 },
    VisibilityNotAllowed { visibility: Visibility },
    WrongCommunity,
    UnknownProgram,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the minimal what/where/when schema and the community's limits.
/// Violations are returned as data; this never fails.
pub fn validate_event_draft(draft: &Event, community: &Community) -> ValidationReport {
    let mut violations = Vec::new();
    if draft.community_id != community.id {
        violations.push(Violation::WrongCommunity);
    }
    if draft.title.trim().is_empty() {
        violations.push(Violation::MissingWhat);
    }
    if draft.location.is_empty() {
        violations.push(Violation::MissingWhere);
    }
    if !draft.interval.is_valid() {
        violations.push(Violation::EmptyInterval);
    } else {
        let max = community.settings.max_event_duration;
        let actual = draft.interval.duration().num_minutes();
        // a partial trailing minute still counts against the limit
        let actual = if draft.interval.duration() > Duration::minutes(actual) { actual + 1 } else { actual };
        if max > 0 && actual > i64::from(max) {
            violations.push(Violation::TooLong { max_minutes: max, actual_minutes: actual });
        }
    }
    if !community.settings.allowed_visibilities.contains(&draft.visibility) {
        violations.push(Violation::VisibilityNotAllowed { visibility: draft.visibility });
    }
    ValidationReport { violations }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, m, day).unwrap()
    }

    #[test]
    fn counting_rice_draft_is_valid() {
        let c = community(chrono_tz::Asia::Shanghai);
        let mut e = event("rice", utc(2023, 7, 10, 6, 0), utc(2023, 7, 10, 8, 0), "office");
        e.title = "Counting Rice".into();
        assert!(validate_event_draft(&e, &c).is_ok());
    }

    #[test]
    fn empty_title_is_missing_what() {
        let c = community(chrono_tz::UTC);
        let mut e = event("x", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        e.title = "  ".into();
        assert_eq!(validate_event_draft(&e, &c).violations, vec![Violation::MissingWhat]);
    }

    #[test]
    fn degenerate_interval_rejected() {
        let c = community(chrono_tz::UTC);
        let at = utc(2024, 6, 1, 10, 0);
        let e = event("x", at, at, "v");
        assert_eq!(validate_event_draft(&e, &c).violations, vec![Violation::EmptyInterval]);
        assert_eq!(TimeInterval::new(at, at), Err(ModelError::EmptyInterval));
    }

    #[test]
    fn free_text_where_must_be_non_empty() {
        let c = community(chrono_tz::UTC);
        let mut e = event("x", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        e.location = Location::Text("".into());
        assert_eq!(validate_event_draft(&e, &c).violations, vec![Violation::MissingWhere]);
        e.location = Location::Text("the big tree".into());
        assert!(validate_event_draft(&e, &c).is_ok());
    }

    #[test]
    fn duration_limit_and_visibility() {
        let mut c = community(chrono_tz::UTC);
        c.settings.max_event_duration = 60;
        c.settings.allowed_visibilities = [Visibility::Public].into_iter().collect();
        let mut e = event("x", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0), "v");
        assert!(validate_event_draft(&e, &c).is_ok());
        e.interval.end = utc(2024, 6, 1, 11, 1);
        e.visibility = Visibility::Unlisted;
        assert_eq!(
            validate_event_draft(&e, &c).violations,
            vec![
                Violation::TooLong { max_minutes: 60, actual_minutes: 61 },
                Violation::VisibilityNotAllowed { visibility: Visibility::Unlisted },
            ]
        );
    }

    #[test]
    fn half_open_intervals_do_not_share_instants() {
        let a = TimeInterval::new(utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 0)).unwrap();
        let b = TimeInterval::new(utc(2024, 6, 1, 11, 0), utc(2024, 6, 1, 12, 0)).unwrap();
        assert!(!a.contains(b.start));
        assert!(b.contains(b.start));
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize_windows(&[]).unwrap(), vec![]);
        let merged = canonicalize_windows(&[
            DateRange::new(d(6, 1), d(6, 10)).unwrap(),
            DateRange::new(d(6, 5), d(6, 15)).unwrap(),
        ])
        .unwrap();
        assert_eq!(merged, vec![DateRange::new(d(6, 1), d(6, 15)).unwrap()]);
        let adjacent = canonicalize_windows(&[
            DateRange::new(d(6, 11), d(6, 12)).unwrap(),
            DateRange::new(d(6, 1), d(6, 10)).unwrap(),
        ])
        .unwrap();
        assert_eq!(adjacent, vec![DateRange::new(d(6, 1), d(6, 12)).unwrap()]);
    }

    #[test]
    fn canonicalize_rejects_inverted_range() {
        let bad = DateRange { start: d(6, 5), end: d(6, 1) };
        assert!(matches!(canonicalize_windows(&[bad]), Err(ModelError::InvertedRange { .. })));
    }

    /// Marks every covered day in a boolean calendar, then re-extracts maximal runs.
    fn day_set_oracle(windows: &[DateRange]) -> Vec<DateRange> {
        let base = d(1, 1);
        let mut covered = vec![false; 400];
        for w in windows {
            let s = (w.start - base).num_days() as usize;
            let e = (w.end - base).num_days() as usize;
            covered[s..=e].iter_mut().for_each(|c| *c = true);
        }
        let mut out = Vec::new();
        let mut run: Option<usize> = None;
        for (i, &c) in covered.iter().chain(std::iter::once(&false)).enumerate() {
            match (c, run) {
                (true, None) => run = Some(i),
                (false, Some(s)) => {
                    out.push(DateRange {
                        start: base + Duration::days(s as i64),
                        end: base + Duration::days(i as i64 - 1),
                    });
                    run = None;
                }
                _ => {}
            }
        }
        out
    }

    fn ranges() -> impl Strategy<Value = Vec<DateRange>> {
        prop::collection::vec((0i64..330, 0i64..30), 0..50).prop_map(|v| {
            v.into_iter()
                .map(|(s, len)| DateRange {
                    start: d(1, 1) + Duration::days(s),
                    end: d(1, 1) + Duration::days(s + len),
                })
                .collect()
        })
    }

    #[test]
    fn fifty_random_ranges_match_day_set_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let windows: Vec<DateRange> = (0..50)
                .map(|_| {
                    let s = rng.random_range(0..330);
                    let len = rng.random_range(0..20);
                    DateRange { start: d(1, 1) + Duration::days(s), end: d(1, 1) + Duration::days(s + len) }
                })
                .collect();
            assert_eq!(canonicalize_windows(&windows).unwrap(), day_set_oracle(&windows));
        }
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(windows in ranges()) {
            let once = canonicalize_windows(&windows).unwrap();
            let twice = canonicalize_windows(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once, day_set_oracle(&windows));
        }
    }

    #[test]
    fn weekly_hours_reject_overlap() {
        let t = |h| NaiveTime::from_hms_opt(h, 0, 0).unwrap();
        let mut hours = BTreeMap::new();
        hours.insert(Day::Mon, vec![HoursSpan { start: t(12), end: t(15) }, HoursSpan { start: t(9), end: t(13) }]);
        assert_eq!(WeeklyHours(hours).normalized(), Err(ModelError::OverlappingHours(Day::Mon)));
        assert!(HoursSpan::new(t(10), t(9)).is_err());
        assert_eq!(HoursSpan::new(t(0), t(0)).unwrap().end_nanos(), NANOS_PER_DAY);
        assert_eq!(HoursSpan::new(t(18), t(0)).unwrap().end_nanos(), NANOS_PER_DAY);
    }

    #[test]
    fn location_serializes_tagged() {
        let v = serde_json::to_string(&Location::Venue(VenueId::from("v1"))).unwrap();
        assert_eq!(v, r#"{"venue":"v1"}"#);
        let t: Location = serde_json::from_str(r#"{"text":"park"}"#).unwrap();
        assert_eq!(t, Location::Text("park".into()));
    }
}
