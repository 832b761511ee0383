//! The single mutation path: every write goes through [`Service`], which
//! checks permissions, runs the domain rules, appends exactly one feed entry
//! and persists, all under one lock.
//!
//! A write works on a copy of the community's state. The copy replaces the
//! live state only after the snapshot is durably stored, so a rejected or
//! failed request never leaves a partial change behind.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::num::NonZeroU32;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{
    can, random_token, Action, Actor, BoundaryMode, BoundaryPolicy, Invitation, JoinError, JoinRequest, JoinedVia,
    Membership, ResourceContext, Role, VerificationRequest, VerifierRegistry, Decision, TOKEN_BYTES,
};
use crate::analytics::{
    bridge_prompt_ranking, compute_deployment_stats, default_grouping, BridgePrompt, DeploymentStats, StatsOptions,
};
use crate::canonical::sha256_hex;
use crate::model::{
    validate_event_draft, Badge, BadgeId, Community, CommunityId, CommunitySettings, CredentialDescriptor, DateRange,
    Event, EventChange, EventId, EventState, Geo, HistoryEntry, InvitationId, Location, ModelError, Person, PersonId,
    Price, Program, ProgramId, RsvpMode, Ticket, TicketId, TimeInterval, ValidationReport, Venue, VenueId,
    Violation, Visibility, WeeklyHours,
};
use crate::participation::{
    apply_checkin, apply_rsvp, badges_by_holder, generate_checkin_token, grant_badge, presence_summary,
    revoke_checkin, token_eligible, verify_checkin_token, BadgeSpec, CommunitySecret, ParticipationError,
    ParticipationRecord, PresenceSummary, RsvpState,
};
use crate::portability::{
    export_bundle, fork_bundle, import_bundle, CommunityData, DeploymentBundle, ExportScope, ForkOptions, IdMapping,
    PortabilityError,
};
use crate::scheduling::{
    plan_reschedule, project_map, project_schedule, BookingIndex, Conflict, ConflictChecker, MapPin,
    RescheduleOutcome, RescheduleRequest, ScheduleFilter, ScheduleView, SchedulingError, ViewMode,
};
use crate::storage::{Storage, StorageError};

/// Source of "now". Injected so tests can pin time.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = at;
    }

    pub fn advance(&self, by: Duration) {
        let mut g = self.0.lock().unwrap_or_else(|e| e.into_inner());
        *g += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    Created,
    Published,
    Rescheduled,
    Cancelled,
    RsvpDelta,
    CommunityCreated,
    Imported,
    Forked,
    SettingsChanged,
    ProgramCreated,
    VenueCreated,
    VenueUpdated,
    MemberJoined,
    JoinRequested,
    JoinApproved,
    RoleChanged,
    InvitationIssued,
    TicketCreated,
    BadgeGranted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsvpCounts {
    pub going: usize,
    pub starred: usize,
    pub checked_in: usize,
}

/// One committed change. Sequences start at 1 and are gapless per community.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub sequence: u64,
    pub kind: FeedKind,
    pub event_id: Option<EventId>,
    pub at: DateTime<Utc>,
    /// Current counts for `rsvp_delta` entries.
    pub counts: Option<RsvpCounts>,
}

/// Live state of one community.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityState {
    pub community: Community,
    /// People this community knows about, in first-contact order.
    pub persons: IndexSet<PersonId>,
    pub programs: IndexMap<ProgramId, Program>,
    pub venues: IndexMap<VenueId, Venue>,
    pub memberships: IndexMap<PersonId, Membership>,
    pub events: IndexMap<EventId, Event>,
    #[serde(with = "indexmap::map::serde_seq")]
    pub records: IndexMap<(PersonId, EventId), ParticipationRecord>,
    pub tickets: IndexMap<TicketId, Ticket>,
    pub badges: IndexMap<BadgeId, Badge>,
    pub invitations: IndexMap<InvitationId, Invitation>,
    pub join_requests: IndexMap<PersonId, JoinRequest>,
    pub feed: Vec<FeedEntry>,
    #[serde(skip)]
    index: BookingIndex,
}

impl CommunityState {
    fn new(community: Community) -> Self {
        Self {
            community,
            persons: IndexSet::new(),
            programs: IndexMap::new(),
            venues: IndexMap::new(),
            memberships: IndexMap::new(),
            events: IndexMap::new(),
            records: IndexMap::new(),
            tickets: IndexMap::new(),
            badges: IndexMap::new(),
            invitations: IndexMap::new(),
            join_requests: IndexMap::new(),
            feed: Vec::new(),
            index: BookingIndex::new(),
        }
    }

    fn from_data(d: CommunityData) -> Self {
        let mut s = Self::new(d.community);
        s.persons = d.persons.iter().map(|p| p.id.clone()).collect();
        s.programs = d.programs.into_iter().map(|p| (p.id.clone(), p)).collect();
        s.venues = d.venues.into_iter().map(|v| (v.id.clone(), v)).collect();
        s.memberships = d.memberships.into_iter().map(|m| (m.person_id.clone(), m)).collect();
        s.events = d.events.into_iter().map(|e| (e.id.clone(), e)).collect();
        s.records = d
            .participation_records
            .into_iter()
            .map(|r| ((r.person_id.clone(), r.event_id.clone()), r))
            .collect();
        s.tickets = d.tickets.into_iter().map(|t| (t.id.clone(), t)).collect();
        s.badges = d.badges.into_iter().map(|b| (b.id.clone(), b)).collect();
        s.invitations = d.invitations.into_iter().map(|i| (i.id.clone(), i)).collect();
        s.rebuild_index();
        s
    }

    fn rebuild_index(&mut self) {
        self.index = BookingIndex::from_events(self.events.values());
    }

    fn snapshot(&self, directory: &Directory) -> CommunityData {
        CommunityData {
            community: self.community.clone(),
            programs: self.programs.values().cloned().collect(),
            venues: self.venues.values().cloned().collect(),
            persons: self.persons.iter().filter_map(|p| directory.persons.get(p).cloned()).collect(),
            memberships: self.memberships.values().cloned().collect(),
            events: self.events.values().cloned().collect(),
            participation_records: self.records.values().cloned().collect(),
            tickets: self.tickets.values().cloned().collect(),
            badges: self.badges.values().cloned().collect(),
            invitations: self.invitations.values().cloned().collect(),
        }
    }

    fn counts(&self, event: &EventId) -> RsvpCounts {
        let mut c = RsvpCounts::default();
        for r in self.records.values().filter(|r| &r.event_id == event) {
            match r.state {
                RsvpState::Starred => c.starred += 1,
                RsvpState::Going => c.going += 1,
                RsvpState::CheckedIn => {
                    c.going += 1;
                    c.checked_in += 1;
                }
                RsvpState::None => {}
            }
        }
        c
    }

    fn actor(&self, person: Option<&PersonId>) -> Actor<'_> {
        match person.and_then(|p| self.memberships.get(p)) {
            Some(m) => Actor::Member(m),
            None => Actor::Guest,
        }
    }

    fn hosts(event: &Event, person: Option<&PersonId>) -> bool {
        person.is_some_and(|p| event.is_hosted_by(p))
    }

    /// Direct access: anything the viewer may open by id.
    fn can_see(&self, event: &Event, viewer: Option<&PersonId>) -> bool {
        let actor = self.actor(viewer);
        if event.state == EventState::Draft {
            return Self::hosts(event, viewer)
                || matches!(actor, Actor::Member(m) if m.effective_role(event.program_id.as_ref()) >= Role::Facilitator);
        }
        can(actor, Action::ViewEvent, &ResourceContext::for_event(event), &self.community.settings)
    }

    /// Listings additionally hide unlisted events from everyone but their
    /// hosts and facilitators.
    fn listed_for(&self, event: &Event, viewer: Option<&PersonId>) -> bool {
        if !self.can_see(event, viewer) {
            return false;
        }
        event.visibility != Visibility::Unlisted
            || Self::hosts(event, viewer)
            || matches!(self.actor(viewer), Actor::Member(m) if m.role >= Role::Facilitator)
    }

    fn visible_events(&self, viewer: Option<&PersonId>) -> Vec<Event> {
        self.events.values().filter(|e| self.listed_for(e, viewer)).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub person_id: PersonId,
    pub expires_at: DateTime<Utc>,
}

/// People and credentials shared by all communities. Claim and session
/// tokens are stored as SHA-256 digests only.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Directory {
    pub persons: IndexMap<PersonId, Person>,
    pub claims: IndexMap<String, PersonId>,
    pub sessions: IndexMap<String, Session>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("authentication required")]
    Unauthenticated,
    #[error("permission denied")]
    Forbidden,
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("scheduling conflict")]
    Conflict(Vec<Conflict>),
    #[error("stale revision: expected {expected}, current {current}")]
    StaleRevision { expected: u64, current: u64 },
    #[error("invalid event draft")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Participation(#[from] ParticipationError),
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error(transparent)]
    Portability(#[from] PortabilityError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl From<SchedulingError> for ServiceError {
    fn from(e: SchedulingError) -> Self {
        ServiceError::Unprocessable(e.to_string())
    }
}

impl ServiceError {
    /// HTTP status this error maps to.
    pub fn http_status(&self) -> u16 {
        use ParticipationError as P;
        match self {
            ServiceError::Unauthenticated => 401,
            ServiceError::Forbidden => 403,
            ServiceError::NotFound(_) => 404,
            ServiceError::Conflict(_) | ServiceError::StaleRevision { .. } => 409,
            ServiceError::Invalid(_) | ServiceError::Unprocessable(_) | ServiceError::Model(_) => 422,
            ServiceError::Participation(e) => match e {
                P::PermissionDenied | P::VisibilityDenied => 403,
                P::SoldOut | P::AlreadyClaimed => 409,
                _ => 422,
            },
            ServiceError::Join(e) => match e {
                JoinError::DuplicateMembership => 409,
                JoinError::UnknownVerifier(_) => 422,
                JoinError::ApproverNotEligible => 403,
                _ => 403,
            },
            ServiceError::Portability(e) => match e {
                PortabilityError::PermissionDenied => 403,
                _ => 422,
            },
            ServiceError::Storage(_) => 500,
        }
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Unauthenticated => "unauthenticated",
            ServiceError::Forbidden => "forbidden",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::StaleRevision { .. } => "stale_revision",
            ServiceError::Invalid(_) => "invalid",
            ServiceError::Unprocessable(_) | ServiceError::Model(_) => "unprocessable",
            ServiceError::Participation(_) => "participation",
            ServiceError::Join(_) => "join",
            ServiceError::Portability(_) => "portability",
            ServiceError::Storage(_) => "storage",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewCommunity {
    pub name: String,
    pub timezone: Tz,
    #[serde(default)]
    pub boundary_policy: Option<BoundaryPolicy>,
    #[serde(default)]
    pub settings: Option<CommunitySettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDraft {
    pub title: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub location: Location,
    #[serde(default)]
    pub co_hosts: BTreeSet<PersonId>,
    #[serde(default)]
    pub speakers: Vec<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub program_id: Option<ProgramId>,
    #[serde(default)]
    pub visibility: Option<Visibility>,
    #[serde(default)]
    pub rsvp_mode: Option<RsvpMode>,
    #[serde(default)]
    pub checkin_enabled: Option<bool>,
    /// Save as a draft instead of publishing. Drafts hold no venue.
    #[serde(default)]
    pub draft: bool,
}

impl EventDraft {
    /// Minimal what/where/when draft.
    pub fn new(title: impl Into<String>, start: DateTime<Utc>, end: DateTime<Utc>, location: Location) -> Self {
        Self {
            title: title.into(),
            start,
            end,
            location,
            co_hosts: BTreeSet::new(),
            speakers: Vec::new(),
            tags: BTreeSet::new(),
            program_id: None,
            visibility: None,
            rsvp_mode: None,
            checkin_enabled: None,
            draft: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueDraft {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub geo: Option<Geo>,
    #[serde(default)]
    pub capacity: Option<NonZeroU32>,
    #[serde(default)]
    pub amenities: BTreeSet<String>,
    #[serde(default)]
    pub availability_windows: Vec<DateRange>,
    #[serde(default)]
    pub opening_hours: WeeklyHours,
    #[serde(default)]
    pub restricted_to_programs: BTreeSet<ProgramId>,
    #[serde(default)]
    pub shareable: bool,
}

impl VenueDraft {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: String::new(),
            geo: None,
            capacity: None,
            amenities: BTreeSet::new(),
            availability_windows: Vec::new(),
            opening_hours: WeeklyHours::always_open(),
            restricted_to_programs: BTreeSet::new(),
            shareable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramDraft {
    pub title: String,
    #[serde(default)]
    pub interval: Option<TimeInterval>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescheduleBody {
    pub expected_revision: u64,
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
    #[serde(default)]
    pub end: Option<DateTime<Utc>>,
    #[serde(default)]
    pub location: Option<Location>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinBody {
    #[serde(default)]
    pub invitation_token: Option<String>,
    #[serde(default)]
    pub credential: Option<CredentialDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JoinOutcome {
    Joined { membership: Membership },
    Pending { approvals: u32, required: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketDraft {
    pub price: Price,
    #[serde(default)]
    pub quantity: Option<NonZeroU32>,
    #[serde(default)]
    pub required_badge: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedEvent {
    pub event: Event,
    /// Non-blocking conflicts under the community's settings.
    pub advisories: Vec<Conflict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckinResult {
    pub record: ParticipationRecord,
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewPerson {
    pub person: Person,
    /// Reusable sign-in secret; shown once.
    pub claim_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionGrant {
    pub token: String,
    pub person_id: PersonId,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub community: Community,
    pub mapping: IdMapping,
    /// Claim tokens for the people created by the import, keyed by their new id.
    pub claim_tokens: BTreeMap<PersonId, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub id: CommunityId,
    pub name: String,
    pub timezone: Tz,
    pub boundary_policy: BoundaryPolicy,
    pub member_count: usize,
    pub event_count: usize,
}

pub struct ServiceOptions {
    pub session_ttl: Duration,
    pub verifiers: VerifierRegistry,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self { session_ttl: Duration::hours(72), verifiers: VerifierRegistry::with_defaults() }
    }
}

#[derive(Default)]
struct Inner {
    directory: Directory,
    communities: HashMap<CommunityId, CommunityState>,
    secrets: HashMap<CommunityId, CommunitySecret>,
}

/// Scratch copy a write works on.
struct Tx<'a> {
    state: CommunityState,
    directory: &'a Directory,
    secret: Option<&'a CommunitySecret>,
    now: DateTime<Utc>,
    emitted: bool,
}

impl Tx<'_> {
    fn emit(&mut self, kind: FeedKind, event_id: Option<EventId>) {
        assert!(!self.emitted, "one feed entry per committed change");
        let counts = match (kind, &event_id) {
            (FeedKind::RsvpDelta, Some(id)) => Some(self.state.counts(id)),
            _ => None,
        };
        let sequence = self.state.feed.last().map_or(1, |f| f.sequence + 1);
        self.state.feed.push(FeedEntry { sequence, kind, event_id, at: self.now, counts });
        self.emitted = true;
    }

    fn member(&self, person: &PersonId) -> Result<&Membership> {
        self.state.memberships.get(person).ok_or(ServiceError::Forbidden)
    }

    fn event(&self, id: &EventId) -> Result<&Event> {
        self.state.events.get(id).ok_or(ServiceError::NotFound("event"))
    }

    fn allow(&self, person: &PersonId, action: Action, ctx: &ResourceContext<'_>) -> Result<()> {
        if can(self.state.actor(Some(person)), action, ctx, &self.state.community.settings) {
            Ok(())
        } else {
            Err(ServiceError::Forbidden)
        }
    }

    fn touch_person(&mut self, person: &PersonId) {
        if !self.state.persons.contains(person) {
            self.state.persons.insert(person.clone());
        }
    }

    fn store_record(&mut self, record: ParticipationRecord) {
        self.state.records.insert((record.person_id.clone(), record.event_id.clone()), record);
    }
}

fn token_digest(token: &str) -> String {
    sha256_hex(token.as_bytes())
}

/// Transactional facade over all communities.
pub struct Service {
    inner: RwLock<Inner>,
    storage: Arc<dyn Storage>,
    clock: Arc<dyn Clock>,
    options: ServiceOptions,
}

impl Service {
    /// Opens the service over `storage`, restoring whatever it holds.
    pub fn open(storage: Arc<dyn Storage>, clock: Arc<dyn Clock>, options: ServiceOptions) -> Result<Self> {
        let loaded = storage.load()?;
        let mut communities = HashMap::new();
        for mut state in loaded.communities {
            state.rebuild_index();
            communities.insert(state.community.id.clone(), state);
        }
        Ok(Self {
            inner: RwLock::new(Inner { directory: loaded.directory, communities, secrets: loaded.secrets }),
            storage,
            clock,
            options,
        })
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn read_lock(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write_lock(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    fn write<R>(&self, cid: &CommunityId, f: impl FnOnce(&mut Tx<'_>) -> Result<R>) -> Result<R> {
        let mut inner = self.write_lock();
        let now = self.clock.now();
        let base = inner.communities.get(cid).ok_or(ServiceError::NotFound("community"))?;
        let mut tx = Tx {
            state: base.clone(),
            directory: &inner.directory,
            secret: inner.secrets.get(cid),
            now,
            emitted: false,
        };
        let out = f(&mut tx)?;
        let Tx { state, emitted, .. } = tx;
        if emitted {
            self.storage.save_community(&state)?;
            inner.communities.insert(cid.clone(), state);
        }
        Ok(out)
    }

    fn read<R>(&self, cid: &CommunityId, f: impl FnOnce(&CommunityState, &Directory) -> Result<R>) -> Result<R> {
        let inner = self.read_lock();
        let state = inner.communities.get(cid).ok_or(ServiceError::NotFound("community"))?;
        f(state, &inner.directory)
    }

    // --- identity ---

    /// Registers a person and returns a claim token for signing in.
    pub fn create_person(&self, display_name: &str) -> Result<NewPerson> {
        let person = Person::new(display_name)?;
        let token = random_token(TOKEN_BYTES);
        let mut inner = self.write_lock();
        let mut dir = inner.directory.clone();
        dir.persons.insert(person.id.clone(), person.clone());
        dir.claims.insert(token_digest(&token), person.id.clone());
        self.storage.save_directory(&dir)?;
        inner.directory = dir;
        Ok(NewPerson { person, claim_token: token })
    }

    /// Exchanges a claim token for a bearer session.
    pub fn claim_session(&self, claim_token: &str) -> Result<SessionGrant> {
        let now = self.clock.now();
        let mut inner = self.write_lock();
        let person_id = inner.directory.claims.get(&token_digest(claim_token)).cloned().ok_or(ServiceError::Unauthenticated)?;
        let token = random_token(TOKEN_BYTES);
        let expires_at = now + self.options.session_ttl;
        let mut dir = inner.directory.clone();
        dir.sessions.retain(|_, s| s.expires_at > now);
        dir.sessions.insert(token_digest(&token), Session { person_id: person_id.clone(), expires_at });
        self.storage.save_directory(&dir)?;
        inner.directory = dir;
        Ok(SessionGrant { token, person_id, expires_at })
    }

    /// Resolves a bearer token to its person.
    pub fn authenticate(&self, token: &str) -> Result<PersonId> {
        let now = self.clock.now();
        let inner = self.read_lock();
        match inner.directory.sessions.get(&token_digest(token)) {
            Some(s) if s.expires_at > now => Ok(s.person_id.clone()),
            _ => Err(ServiceError::Unauthenticated),
        }
    }

    pub fn person(&self, id: &PersonId) -> Result<Person> {
        self.read_lock().directory.persons.get(id).cloned().ok_or(ServiceError::NotFound("person"))
    }

    // --- communities ---

    pub fn create_community(&self, actor: &PersonId, req: NewCommunity) -> Result<Community> {
        let now = self.clock.now();
        if req.name.trim().is_empty() {
            return Err(ServiceError::Unprocessable("community name is empty".into()));
        }
        let policy = req.boundary_policy.unwrap_or_else(BoundaryPolicy::open);
        if !policy.is_valid() {
            return Err(ServiceError::Unprocessable("peer approval needs at least one approval".into()));
        }
        let mut inner = self.write_lock();
        if !inner.directory.persons.contains_key(actor) {
            return Err(ServiceError::Unauthenticated);
        }
        if let BoundaryMode::CredentialProof { verifier_id } = &policy.mode {
            if !self.options.verifiers.contains(verifier_id) {
                return Err(JoinError::UnknownVerifier(verifier_id.clone()).into());
            }
        }
        let id = CommunityId::random();
        let community = Community {
            id: id.clone(),
            lineage_id: id.clone(),
            name: req.name,
            timezone: req.timezone,
            boundary_policy: policy,
            settings: req.settings.unwrap_or_default(),
            created_at: now,
            forked_from: None,
            archive: Vec::new(),
        };
        let mut state = CommunityState::new(community.clone());
        state.persons.insert(actor.clone());
        state.memberships.insert(
            actor.clone(),
            Membership {
                person_id: actor.clone(),
                community_id: id.clone(),
                role: Role::Coordinator,
                program_overrides: BTreeMap::new(),
                joined_at: now,
                joined_via: JoinedVia::Founder,
            },
        );
        state.feed.push(FeedEntry { sequence: 1, kind: FeedKind::CommunityCreated, event_id: None, at: now, counts: None });
        let secret = CommunitySecret::generate();
        self.storage.save_secret(&id, &secret)?;
        self.storage.save_community(&state)?;
        inner.secrets.insert(id.clone(), secret);
        inner.communities.insert(id, state);
        Ok(community)
    }

    pub fn list_communities(&self) -> Vec<CommunitySummary> {
        let inner = self.read_lock();
        let mut out: Vec<CommunitySummary> = inner
            .communities
            .values()
            .map(|s| CommunitySummary {
                id: s.community.id.clone(),
                name: s.community.name.clone(),
                timezone: s.community.timezone,
                boundary_policy: s.community.boundary_policy.clone(),
                member_count: s.memberships.len(),
                event_count: s.events.len(),
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn community(&self, cid: &CommunityId) -> Result<Community> {
        self.read(cid, |s, _| Ok(s.community.clone()))
    }

    pub fn membership(&self, cid: &CommunityId, person: &PersonId) -> Result<Option<Membership>> {
        self.read(cid, |s, _| Ok(s.memberships.get(person).cloned()))
    }

    pub fn update_settings(
        &self,
        actor: &PersonId,
        cid: &CommunityId,
        settings: Option<CommunitySettings>,
        boundary_policy: Option<BoundaryPolicy>,
    ) -> Result<Community> {
        if let Some(BoundaryPolicy { mode: BoundaryMode::CredentialProof { verifier_id }, .. }) = &boundary_policy {
            if !self.options.verifiers.contains(verifier_id) {
                return Err(JoinError::UnknownVerifier(verifier_id.clone()).into());
            }
        }
        self.write(cid, |tx| {
            tx.allow(actor, Action::EditSettings, &ResourceContext::default())?;
            if let Some(p) = boundary_policy {
                if !p.is_valid() {
                    return Err(ServiceError::Unprocessable("peer approval needs at least one approval".into()));
                }
                tx.state.community.boundary_policy = p;
            }
            if let Some(s) = settings {
                tx.state.community.settings = s;
            }
            tx.emit(FeedKind::SettingsChanged, None);
            Ok(tx.state.community.clone())
        })
    }

    pub fn set_role(&self, actor: &PersonId, cid: &CommunityId, person: &PersonId, role: Role) -> Result<Membership> {
        self.write(cid, |tx| {
            tx.allow(actor, Action::EditSettings, &ResourceContext::default())?;
            let m = tx.state.memberships.get_mut(person).ok_or(ServiceError::NotFound("membership"))?;
            if m.role == role {
                return Ok(m.clone());
            }
            m.role = role;
            let out = m.clone();
            tx.emit(FeedKind::RoleChanged, None);
            Ok(out)
        })
    }

    // --- boundary ---

    pub fn issue_invitation(
        &self,
        actor: &PersonId,
        cid: &CommunityId,
        max_uses: Option<u32>,
        expires_at: Option<DateTime<Utc>>,
    ) -> Result<(Invitation, String)> {
        self.write(cid, |tx| {
            tx.allow(actor, Action::EditSettings, &ResourceContext::default())?;
            let (inv, token) = Invitation::issue(cid.clone(), actor.clone(), max_uses, expires_at);
            tx.state.invitations.insert(inv.id.clone(), inv.clone());
            tx.emit(FeedKind::InvitationIssued, None);
            Ok((inv, token))
        })
    }

    pub fn join(&self, actor: &PersonId, cid: &CommunityId, body: JoinBody) -> Result<JoinOutcome> {
        // verifiers may be slow, so they run before the write lock
        let policy = self.read(cid, |s, _| Ok(s.community.boundary_policy.clone()))?;
        let verified = match &policy.mode {
            BoundaryMode::CredentialProof { verifier_id } => {
                let cred = body.credential.as_ref().ok_or(JoinError::CredentialMissing)?;
                let request = VerificationRequest {
                    scheme: cred.scheme.clone(),
                    descriptor: cred.data.clone(),
                    holder_badges: Vec::new(),
                };
                let resp = self.options.verifiers.verify(verifier_id, &request)?;
                if resp.decision != Decision::Accept {
                    return Err(JoinError::VerifierRejected(verifier_id.clone()).into());
                }
                Some(verifier_id.clone())
            }
            _ => None,
        };
        self.write(cid, |tx| {
            if !tx.directory.persons.contains_key(actor) {
                return Err(ServiceError::Unauthenticated);
            }
            if tx.state.memberships.contains_key(actor) {
                return Err(JoinError::DuplicateMembership.into());
            }
            let policy = tx.state.community.boundary_policy.clone();
            let via = match &policy.mode {
                BoundaryMode::OpenRegistration => JoinedVia::Open,
                BoundaryMode::InvitationToken => {
                    let token = body.invitation_token.as_deref().ok_or(JoinError::InvalidToken)?;
                    let inv = tx
                        .state
                        .invitations
                        .values_mut()
                        .find(|i| i.matches(token))
                        .ok_or(JoinError::InvalidToken)?;
                    inv.redeem(tx.now)?;
                    JoinedVia::Invitation
                }
                BoundaryMode::PeerApproval { required_approvals } => {
                    if let Some(req) = tx.state.join_requests.get(actor) {
                        return Ok(JoinOutcome::Pending {
                            approvals: req.approvals.len() as u32,
                            required: *required_approvals,
                        });
                    }
                    tx.state.join_requests.insert(actor.clone(), JoinRequest::new(actor.clone(), tx.now));
                    tx.touch_person(actor);
                    tx.emit(FeedKind::JoinRequested, None);
                    return Ok(JoinOutcome::Pending { approvals: 0, required: *required_approvals });
                }
                BoundaryMode::CredentialProof { verifier_id } => {
                    if verified.as_ref() != Some(verifier_id) {
                        return Err(JoinError::CredentialMissing.into());
                    }
                    JoinedVia::Credential
                }
            };
            let membership = Membership {
                person_id: actor.clone(),
                community_id: cid.clone(),
                role: policy.granted_role_on_join,
                program_overrides: BTreeMap::new(),
                joined_at: tx.now,
                joined_via: via,
            };
            tx.state.memberships.insert(actor.clone(), membership.clone());
            tx.touch_person(actor);
            tx.emit(FeedKind::MemberJoined, None);
            Ok(JoinOutcome::Joined { membership })
        })
    }

    pub fn approve_join(&self, actor: &PersonId, cid: &CommunityId, applicant: &PersonId) -> Result<JoinOutcome> {
        self.write(cid, |tx| {
            let approver = tx.member(actor)?.clone();
            let policy = tx.state.community.boundary_policy.clone();
            let BoundaryMode::PeerApproval { required_approvals } = policy.mode else {
                return Err(ServiceError::Unprocessable("community does not use peer approval".into()));
            };
            let req = tx.state.join_requests.get_mut(applicant).ok_or(ServiceError::NotFound("join request"))?;
            let before = req.approvals.len();
            let satisfied = req.approve(&approver, required_approvals)?;
            let approvals = req.approvals.len() as u32;
            if satisfied {
                tx.state.join_requests.shift_remove(applicant);
                let membership = Membership {
                    person_id: applicant.clone(),
                    community_id: cid.clone(),
                    role: policy.granted_role_on_join,
                    program_overrides: BTreeMap::new(),
                    joined_at: tx.now,
                    joined_via: JoinedVia::PeerApproval,
                };
                tx.state.memberships.insert(applicant.clone(), membership.clone());
                tx.emit(FeedKind::MemberJoined, None);
                return Ok(JoinOutcome::Joined { membership });
            }
            if approvals as usize != before {
                tx.emit(FeedKind::JoinApproved, None);
            }
            Ok(JoinOutcome::Pending { approvals, required: required_approvals })
        })
    }

    // --- structure ---

    pub fn create_program(&self, actor: &PersonId, cid: &CommunityId, draft: ProgramDraft) -> Result<Program> {
        self.write(cid, |tx| {
            tx.allow(actor, Action::CreateVenue, &ResourceContext::default())?;
            if draft.title.trim().is_empty() {
                return Err(ServiceError::Unprocessable("program title is empty".into()));
            }
            if draft.interval.is_some_and(|iv| !iv.is_valid()) {
                return Err(ModelError::EmptyInterval.into());
            }
            let program = Program {
                id: ProgramId::random(),
                community_id: cid.clone(),
                title: draft.title,
                interval: draft.interval,
                description: draft.description,
            };
            tx.state.programs.insert(program.id.clone(), program.clone());
            tx.emit(FeedKind::ProgramCreated, None);
            Ok(program)
        })
    }

    fn build_venue(tx: &Tx<'_>, id: VenueId, cid: &CommunityId, d: VenueDraft) -> Result<Venue> {
        if d.name.trim().is_empty() {
            return Err(ServiceError::Unprocessable("venue name is empty".into()));
        }
        if let Some(g) = d.geo {
            if !g.is_valid() {
                return Err(ModelError::InvalidGeo.into());
            }
        }
        if let Some(p) = d.restricted_to_programs.iter().find(|p| !tx.state.programs.contains_key(*p)) {
            return Err(ServiceError::Unprocessable(format!("unknown program {p}")));
        }
        Ok(Venue {
            id,
            community_id: cid.clone(),
            name: d.name,
            description: d.description,
            geo: d.geo,
            capacity: d.capacity,
            amenities: d.amenities,
            availability_windows: d.availability_windows,
            opening_hours: d.opening_hours,
            restricted_to_programs: d.restricted_to_programs,
            shareable: d.shareable,
        }
        .normalized()?)
    }

    pub fn create_venue(&self, actor: &PersonId, cid: &CommunityId, draft: VenueDraft) -> Result<Venue> {
        self.write(cid, |tx| {
            tx.allow(actor, Action::CreateVenue, &ResourceContext::default())?;
            let venue = Self::build_venue(tx, VenueId::random(), cid, draft)?;
            tx.state.venues.insert(venue.id.clone(), venue.clone());
            tx.emit(FeedKind::VenueCreated, None);
            Ok(venue)
        })
    }

    /// Replaces a venue's description. Existing bookings stay as they are.
    pub fn update_venue(&self, actor: &PersonId, cid: &CommunityId, id: &VenueId, draft: VenueDraft) -> Result<Venue> {
        self.write(cid, |tx| {
            tx.allow(actor, Action::CreateVenue, &ResourceContext::default())?;
            if !tx.state.venues.contains_key(id) {
                return Err(ServiceError::NotFound("venue"));
            }
            let venue = Self::build_venue(tx, id.clone(), cid, draft)?;
            tx.state.venues.insert(id.clone(), venue.clone());
            tx.emit(FeedKind::VenueUpdated, None);
            Ok(venue)
        })
    }

    pub fn venues(&self, cid: &CommunityId) -> Result<Vec<Venue>> {
        self.read(cid, |s, _| Ok(s.venues.values().cloned().collect()))
    }

    pub fn programs(&self, cid: &CommunityId) -> Result<Vec<Program>> {
        self.read(cid, |s, _| Ok(s.programs.values().cloned().collect()))
    }

    // --- events ---

    /// Validates, conflict-checks and stores a new event hosted by `actor`.
    /// Blocking conflicts reject the draft with nothing stored.
    pub fn create_event(&self, actor: &PersonId, cid: &CommunityId, draft: EventDraft) -> Result<CreatedEvent> {
        self.write(cid, |tx| {
            let member = tx.member(actor)?.clone();
            tx.allow(actor, Action::CreateEvent, &ResourceContext::for_program(draft.program_id.as_ref()))?;
            let settings = tx.state.community.settings.clone();
            let rsvp_default = if settings.rsvp_required_default { RsvpMode::RsvpTracked } else { RsvpMode::OpenDropIn };
            let mut event = Event {
                id: EventId::random(),
                community_id: cid.clone(),
                title: draft.title,
                interval: TimeInterval { start: draft.start, end: draft.end },
                location: draft.location,
                host_id: actor.clone(),
                co_hosts: draft.co_hosts,
                speakers: draft.speakers,
                tags: draft.tags,
                program_id: draft.program_id,
                visibility: draft.visibility.unwrap_or(settings.default_event_visibility),
                rsvp_mode: draft.rsvp_mode.unwrap_or(rsvp_default),
                checkin_enabled: draft.checkin_enabled.unwrap_or(true),
                state: if draft.draft { EventState::Draft } else { EventState::Published },
                revision: 1,
                created_at: tx.now,
                created_by_role_snapshot: member.effective_role(None),
                history: Vec::new(),
            };
            event.created_by_role_snapshot = member.effective_role(event.program_id.as_ref());
            let mut report = validate_event_draft(&event, &tx.state.community);
            if event.program_id.as_ref().is_some_and(|p| !tx.state.programs.contains_key(p)) {
                report.violations.push(Violation::UnknownProgram);
            }
            if !report.is_ok() {
                return Err(ServiceError::Invalid(report));
            }
            if let Some(p) = event.co_hosts.iter().find(|p| !tx.state.memberships.contains_key(*p)) {
                return Err(ServiceError::Unprocessable(format!("co-host {p} is not a member")));
            }
            let advisories = if event.state.is_live() {
                let checker = ConflictChecker::new(tx.state.venues.values(), &tx.state.index, tx.state.community.timezone);
                let conflicts = checker.check(&event)?;
                if conflicts.iter().any(|c| settings.blocking_conflicts.contains(&c.kind)) {
                    return Err(ServiceError::Conflict(conflicts));
                }
                conflicts
            } else {
                if let Some(v) = event.location.venue_id() {
                    if !tx.state.venues.contains_key(v) {
                        return Err(SchedulingError::UnknownVenue(v.clone()).into());
                    }
                }
                Vec::new()
            };
            event.history.push(HistoryEntry { revision: 1, at: tx.now, actor: actor.clone(), change: EventChange::Created });
            tx.state.index.insert(&event);
            tx.state.events.insert(event.id.clone(), event.clone());
            tx.emit(FeedKind::Created, Some(event.id.clone()));
            Ok(CreatedEvent { event, advisories })
        })
    }

    fn check_revision(event: &Event, expected: Option<u64>) -> Result<()> {
        match expected {
            Some(exp) if exp != event.revision => {
                Err(ServiceError::StaleRevision { expected: exp, current: event.revision })
            }
            _ => Ok(()),
        }
    }

    pub fn publish_event(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, expected_revision: Option<u64>) -> Result<CreatedEvent> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(actor, Action::EditEvent, &ResourceContext::for_event(&event))?;
            Self::check_revision(&event, expected_revision)?;
            if event.state != EventState::Draft {
                return Err(ServiceError::Unprocessable("event is not a draft".into()));
            }
            let mut published = event.clone();
            published.state = EventState::Published;
            published.revision += 1;
            let checker = ConflictChecker::new(tx.state.venues.values(), &tx.state.index, tx.state.community.timezone);
            let conflicts = checker.check(&published)?;
            if conflicts.iter().any(|c| tx.state.community.settings.blocking_conflicts.contains(&c.kind)) {
                return Err(ServiceError::Conflict(conflicts));
            }
            tx.state.index.insert(&published);
            tx.state.events.insert(id.clone(), published.clone());
            tx.emit(FeedKind::Published, Some(id.clone()));
            Ok(CreatedEvent { event: published, advisories: conflicts })
        })
    }

    /// Moves an event in time and/or space under optimistic concurrency.
    pub fn reschedule_event(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, body: RescheduleBody) -> Result<CreatedEvent> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(actor, Action::EditEvent, &ResourceContext::for_event(&event))?;
            Self::check_revision(&event, Some(body.expected_revision))?;
            if !event.state.is_live() {
                return Err(ServiceError::Unprocessable("only published events can be rescheduled".into()));
            }
            let interval = match (body.start, body.end) {
                (None, None) => None,
                (s, e) => Some(TimeInterval {
                    start: s.unwrap_or(event.interval.start),
                    end: e.unwrap_or(event.interval.end),
                }),
            };
            if interval.is_none() && body.location.is_none() {
                return Err(ServiceError::Unprocessable("nothing to change".into()));
            }
            let mut probe = event.clone();
            if let Some(iv) = interval {
                probe.interval = iv;
            }
            if let Some(loc) = &body.location {
                probe.location = loc.clone();
            }
            let report = validate_event_draft(&probe, &tx.state.community);
            if !report.is_ok() {
                return Err(ServiceError::Invalid(report));
            }
            let request = RescheduleRequest { new_interval: interval, new_location: body.location };
            let blocking = tx.state.community.settings.blocking_conflicts.clone();
            let checker = ConflictChecker::new(tx.state.venues.values(), &tx.state.index, tx.state.community.timezone);
            match plan_reschedule(&event, &request, &checker, &blocking, actor, tx.now)? {
                RescheduleOutcome::Blocked { conflicts } => Err(ServiceError::Conflict(conflicts)),
                RescheduleOutcome::Applied { event: moved, conflicts } => {
                    tx.state.index.remove(&event);
                    tx.state.index.insert(&moved);
                    tx.state.events.insert(id.clone(), moved.clone());
                    tx.emit(FeedKind::Rescheduled, Some(id.clone()));
                    Ok(CreatedEvent { event: moved, advisories: conflicts })
                }
            }
        })
    }

    pub fn cancel_event(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, expected_revision: Option<u64>) -> Result<Event> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(actor, Action::CancelEvent, &ResourceContext::for_event(&event))?;
            Self::check_revision(&event, expected_revision)?;
            if event.state == EventState::Cancelled {
                return Ok(event);
            }
            let mut cancelled = event.clone();
            cancelled.state = EventState::Cancelled;
            cancelled.revision += 1;
            cancelled.history.push(HistoryEntry {
                revision: cancelled.revision,
                at: tx.now,
                actor: actor.clone(),
                change: EventChange::Cancelled,
            });
            tx.state.index.remove(&event);
            tx.state.events.insert(id.clone(), cancelled.clone());
            tx.emit(FeedKind::Cancelled, Some(id.clone()));
            Ok(cancelled)
        })
    }

    pub fn event(&self, viewer: Option<&PersonId>, cid: &CommunityId, id: &EventId) -> Result<Event> {
        self.read(cid, |s, _| {
            let e = s.events.get(id).filter(|e| s.can_see(e, viewer)).ok_or(ServiceError::NotFound("event"))?;
            Ok(e.clone())
        })
    }

    // --- participation ---

    /// Self-service RSVP: star, go, or withdraw. Check-in only happens
    /// through a verified scan.
    pub fn set_rsvp(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, target: RsvpState) -> Result<ParticipationRecord> {
        if target == RsvpState::CheckedIn {
            return Err(ServiceError::Unprocessable("check-in requires a scanned token".into()));
        }
        self.write(cid, |tx| {
            tx.member(actor)?;
            let event = tx.event(id)?.clone();
            if !tx.state.can_see(&event, Some(actor)) {
                return Err(ServiceError::NotFound("event"));
            }
            if !event.state.is_live() && target != RsvpState::None {
                return Err(ServiceError::Unprocessable("event is not open for RSVPs".into()));
            }
            let key = (actor.clone(), id.clone());
            let current = tx.state.records.get(&key);
            let unchanged = current.is_some_and(|r| r.state == target) || (current.is_none() && target == RsvpState::None);
            let record = apply_rsvp(current, actor, &event, target, tx.now)?;
            if unchanged {
                return Ok(record);
            }
            tx.store_record(record.clone());
            tx.emit(FeedKind::RsvpDelta, Some(id.clone()));
            Ok(record)
        })
    }

    /// Mints a check-in QR payload for the actor.
    pub fn issue_checkin_token(&self, actor: &PersonId, cid: &CommunityId, id: &EventId) -> Result<String> {
        let now = self.clock.now();
        let inner = self.read_lock();
        let state = inner.communities.get(cid).ok_or(ServiceError::NotFound("community"))?;
        if !state.memberships.contains_key(actor) {
            return Err(ServiceError::Forbidden);
        }
        let event = state.events.get(id).filter(|e| state.can_see(e, Some(actor))).ok_or(ServiceError::NotFound("event"))?;
        if !event.state.is_live() {
            return Err(ServiceError::Unprocessable("event is not live".into()));
        }
        let rsvp = state.records.get(&(actor.clone(), id.clone())).map_or(RsvpState::None, |r| r.state);
        if !token_eligible(event, rsvp) {
            return Err(ParticipationError::NotRsvped.into());
        }
        let secret = inner.secrets.get(cid).ok_or(ServiceError::NotFound("community secret"))?;
        Ok(generate_checkin_token(event, actor, secret, now)?)
    }

    /// Verifies a scanned token and checks its holder in. The scanner must be
    /// allowed to check others in at this event.
    pub fn checkin(&self, scanner: &PersonId, cid: &CommunityId, id: &EventId, token: &str) -> Result<CheckinResult> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(scanner, Action::CheckinOthers, &ResourceContext::for_event(&event))?;
            if !event.state.is_live() {
                return Err(ServiceError::Unprocessable("event is not live".into()));
            }
            let secret = tx.secret.ok_or(ServiceError::NotFound("community secret"))?;
            let grace = Duration::minutes(i64::from(tx.state.community.settings.checkin_grace_minutes));
            let claims = verify_checkin_token(token, secret, &event, grace, tx.now)?;
            if !event.checkin_enabled {
                return Err(ParticipationError::CheckinDisabled.into());
            }
            let key = (claims.person_id.clone(), id.clone());
            let outcome = apply_checkin(tx.state.records.get(&key), &claims.person_id, &event, tx.now)?;
            if outcome.duplicate {
                return Ok(CheckinResult { record: outcome.record, duplicate: true });
            }
            tx.touch_person(&claims.person_id);
            tx.store_record(outcome.record.clone());
            tx.emit(FeedKind::RsvpDelta, Some(id.clone()));
            Ok(CheckinResult { record: outcome.record, duplicate: false })
        })
    }

    pub fn revoke_checkin(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, person: &PersonId) -> Result<ParticipationRecord> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(actor, Action::CheckinOthers, &ResourceContext::for_event(&event))?;
            let current = tx.state.records.get(&(person.clone(), id.clone())).ok_or(ServiceError::NotFound("record"))?;
            let record = revoke_checkin(current, tx.now)?;
            tx.store_record(record.clone());
            tx.emit(FeedKind::RsvpDelta, Some(id.clone()));
            Ok(record)
        })
    }

    pub fn presence(&self, viewer: Option<&PersonId>, cid: &CommunityId, id: &EventId) -> Result<PresenceSummary> {
        self.read(cid, |s, dir| {
            let event = s.events.get(id).filter(|e| s.can_see(e, viewer)).ok_or(ServiceError::NotFound("event"))?;
            let role = viewer.and_then(|p| s.memberships.get(p)).map_or(Role::Guest, |m| m.role);
            Ok(presence_summary(
                s.records.values().filter(|r| r.event_id == event.id),
                role,
                |p| dir.persons.get(p).map(|x| x.display_name.clone()),
            ))
        })
    }

    pub fn create_ticket(&self, actor: &PersonId, cid: &CommunityId, id: &EventId, draft: TicketDraft) -> Result<Ticket> {
        self.write(cid, |tx| {
            let event = tx.event(id)?.clone();
            tx.allow(actor, Action::EditEvent, &ResourceContext::for_event(&event))?;
            if event.rsvp_mode != RsvpMode::Ticketed {
                return Err(ServiceError::Unprocessable("event is not ticketed".into()));
            }
            if draft.price.amount.is_sign_negative() {
                return Err(ServiceError::Unprocessable("negative price".into()));
            }
            let ticket = Ticket {
                id: TicketId::random(),
                event_id: id.clone(),
                price: draft.price,
                required_badge: draft.required_badge,
                quantity: draft.quantity,
                claimed: 0,
            };
            tx.state.tickets.insert(ticket.id.clone(), ticket.clone());
            tx.emit(FeedKind::TicketCreated, Some(id.clone()));
            Ok(ticket)
        })
    }

    /// Claims one unit of a ticket and marks the actor as going.
    pub fn claim_ticket(&self, actor: &PersonId, cid: &CommunityId, ticket: &TicketId) -> Result<ParticipationRecord> {
        self.write(cid, |tx| {
            tx.member(actor)?;
            let mut t = tx.state.tickets.get(ticket).cloned().ok_or(ServiceError::NotFound("ticket"))?;
            let event = tx.event(&t.event_id)?.clone();
            if !tx.state.can_see(&event, Some(actor)) {
                return Err(ServiceError::NotFound("ticket"));
            }
            if !event.state.is_live() {
                return Err(ServiceError::Unprocessable("event is not live".into()));
            }
            let key = (actor.clone(), event.id.clone());
            let mut record = tx
                .state
                .records
                .get(&key)
                .cloned()
                .unwrap_or_else(|| ParticipationRecord::new(actor.clone(), event.id.clone(), tx.now));
            if record.ticket_id.is_some() {
                return Err(ParticipationError::AlreadyClaimed.into());
            }
            let badges = badges_by_holder(tx.state.badges.values());
            let empty = BTreeSet::new();
            crate::participation::claim_ticket(&mut t, badges.get(actor).unwrap_or(&empty))?;
            record.ticket_id = Some(t.id.clone());
            let record = if record.state.is_attending() {
                record
            } else {
                apply_rsvp(Some(&record), actor, &event, RsvpState::Going, tx.now)?
            };
            tx.state.tickets.insert(t.id.clone(), t);
            tx.store_record(record.clone());
            tx.emit(FeedKind::RsvpDelta, Some(event.id.clone()));
            Ok(record)
        })
    }

    pub fn grant_badge(&self, actor: &PersonId, cid: &CommunityId, spec: BadgeSpec) -> Result<Badge> {
        self.write(cid, |tx| {
            let role = tx.member(actor)?.role;
            if !tx.state.memberships.contains_key(&spec.issued_to) {
                return Err(ServiceError::Unprocessable("badge holder is not a member".into()));
            }
            if spec.issued_for.as_ref().is_some_and(|e| !tx.state.events.contains_key(e)) {
                return Err(ServiceError::NotFound("event"));
            }
            let badge = grant_badge(role, spec, cid.clone(), tx.now)?;
            tx.state.badges.insert(badge.id.clone(), badge.clone());
            tx.emit(FeedKind::BadgeGranted, badge.issued_for.clone());
            Ok(badge)
        })
    }

    // --- projections ---

    pub fn schedule(&self, viewer: Option<&PersonId>, cid: &CommunityId, filter: &ScheduleFilter, mode: ViewMode) -> Result<ScheduleView> {
        self.read(cid, |s, _| {
            let events = s.visible_events(viewer);
            let venues: Vec<Venue> = s.venues.values().cloned().collect();
            Ok(project_schedule(&events, &venues, s.community.timezone, filter, mode))
        })
    }

    pub fn map(&self, viewer: Option<&PersonId>, cid: &CommunityId, filter: &ScheduleFilter, at: DateTime<Utc>) -> Result<Vec<MapPin>> {
        self.read(cid, |s, _| {
            let events = s.visible_events(viewer);
            let venues: Vec<Venue> = s.venues.values().cloned().collect();
            Ok(project_map(&events, &venues, s.community.timezone, filter, at))
        })
    }

    /// Entries with sequence greater than `since`, in order.
    pub fn feed(&self, cid: &CommunityId, since: u64) -> Result<Vec<FeedEntry>> {
        self.read(cid, |s, _| {
            // sequences are gapless from 1, so entry n sits at index n - 1
            let start = usize::try_from(since).unwrap_or(usize::MAX).min(s.feed.len());
            Ok(s.feed[start..].to_vec())
        })
    }

    /// Statistics over `[from, to)`, defaulting to the span of the live events.
    pub fn stats(
        &self,
        viewer: &PersonId,
        cid: &CommunityId,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        options: StatsOptions,
    ) -> Result<DeploymentStats> {
        self.read(cid, |s, _| {
            if !s.memberships.contains_key(viewer) {
                return Err(ServiceError::Forbidden);
            }
            let live = s.events.values().filter(|e| e.state.is_live());
            let first = live.clone().map(|e| e.interval.start).min();
            let last = live.map(|e| e.interval.end).max();
            let start = from.or(first).unwrap_or_else(|| self.clock.now());
            let end = to.or(last).unwrap_or(start).max(start);
            let window = TimeInterval { start, end };
            Ok(compute_deployment_stats(s.events.values(), s.records.values(), &window, s.community.timezone, options))
        })
    }

    /// Upcoming events whose current RSVPs mix the most cohorts.
    pub fn bridge_prompts(&self, viewer: Option<&PersonId>, cid: &CommunityId, limit: usize) -> Result<Vec<BridgePrompt>> {
        let now = self.clock.now();
        self.read(cid, |s, _| {
            let grouping = default_grouping(s.events.values(), s.records.values());
            let upcoming: Vec<&Event> = s
                .events
                .values()
                .filter(|e| e.state.is_live() && e.interval.start >= now && s.listed_for(e, viewer))
                .collect();
            Ok(bridge_prompt_ranking(upcoming, s.records.values(), &grouping, limit))
        })
    }

    pub fn ical(&self, viewer: Option<&PersonId>, cid: &CommunityId) -> Result<String> {
        self.read(cid, |s, _| {
            let events = s.visible_events(viewer);
            Ok(crate::ical::render_calendar(&s.community, &events, s.venues.values()))
        })
    }

    // --- portability ---

    /// Consistent snapshot of a community, for export or inspection.
    pub fn snapshot(&self, cid: &CommunityId) -> Result<CommunityData> {
        self.read(cid, |s, dir| Ok(s.snapshot(dir)))
    }

    pub fn export(&self, actor: &PersonId, cid: &CommunityId, scope: ExportScope) -> Result<DeploymentBundle> {
        self.read(cid, |s, dir| Ok(export_bundle(&s.snapshot(dir), s.actor(Some(actor)), scope)?))
    }

    /// Publishes a reconstructed community atomically, minting a claim token
    /// for every person it brings along.
    fn publish(&self, data: CommunityData, mapping: IdMapping, kind: FeedKind) -> Result<ImportReport> {
        let now = self.clock.now();
        let mut inner = self.write_lock();
        let mut dir = inner.directory.clone();
        let mut claim_tokens = BTreeMap::new();
        for p in &data.persons {
            if !dir.persons.contains_key(&p.id) {
                let token = random_token(TOKEN_BYTES);
                dir.persons.insert(p.id.clone(), p.clone());
                dir.claims.insert(token_digest(&token), p.id.clone());
                claim_tokens.insert(p.id.clone(), token);
            }
        }
        let community = data.community.clone();
        let mut state = CommunityState::from_data(data);
        state.feed.push(FeedEntry { sequence: 1, kind, event_id: None, at: now, counts: None });
        let secret = CommunitySecret::generate();
        self.storage.save_directory(&dir)?;
        self.storage.save_secret(&community.id, &secret)?;
        self.storage.save_community(&state)?;
        inner.directory = dir;
        inner.secrets.insert(community.id.clone(), secret);
        inner.communities.insert(community.id.clone(), state);
        Ok(ImportReport { community, mapping, claim_tokens })
    }

    /// Imports a bundle file. `actor` is checked to exist when given; `None`
    /// is the offline operator path.
    pub fn import(&self, actor: Option<&PersonId>, bytes: &[u8]) -> Result<ImportReport> {
        if let Some(a) = actor {
            self.person(a).map_err(|_| ServiceError::Unauthenticated)?;
        }
        let bundle = DeploymentBundle::from_file_bytes(bytes)?;
        let imported = import_bundle(&bundle)?;
        self.publish(imported.data, imported.mapping, FeedKind::Imported)
    }

    /// Forks a bundle file into a new live community. The forker, when
    /// given, becomes its coordinator.
    pub fn fork(&self, forker: Option<&PersonId>, bytes: &[u8], name: &str, options: ForkOptions) -> Result<ImportReport> {
        let forker = match forker {
            Some(a) => Some(self.person(a).map_err(|_| ServiceError::Unauthenticated)?),
            None => None,
        };
        if name.trim().is_empty() {
            return Err(ServiceError::Unprocessable("community name is empty".into()));
        }
        let bundle = DeploymentBundle::from_file_bytes(bytes)?;
        let forked = fork_bundle(&bundle, name, options, forker.as_ref(), self.clock.now())?;
        self.publish(forked.data, forked.mapping, FeedKind::Forked)
    }

    /// Export on behalf of whoever operates the store; used by the offline
    /// CLI, which already has the raw snapshots on disk.
    pub fn operator_export(&self, cid: &CommunityId, scope: ExportScope) -> Result<DeploymentBundle> {
        self.read(cid, |s, dir| {
            let operator = operator_membership(cid);
            Ok(export_bundle(&s.snapshot(dir), Actor::Member(&operator), scope)?)
        })
    }

    /// The community holding event `id`, if any.
    pub fn community_of_event(&self, id: &EventId) -> Option<CommunityId> {
        let inner = self.read_lock();
        inner.communities.values().find(|s| s.events.contains_key(id)).map(|s| s.community.id.clone())
    }

    /// The community holding ticket `id`, if any.
    pub fn community_of_ticket(&self, id: &TicketId) -> Option<CommunityId> {
        let inner = self.read_lock();
        inner.communities.values().find(|s| s.tickets.contains_key(id)).map(|s| s.community.id.clone())
    }
}

/// A coordinator membership for the store operator, who is not a person in
/// the directory.
pub fn operator_membership(cid: &CommunityId) -> Membership {
    Membership {
        person_id: PersonId::from("operator"),
        community_id: cid.clone(),
        role: Role::Coordinator,
        program_overrides: BTreeMap::new(),
        joined_at: DateTime::<Utc>::UNIX_EPOCH,
        joined_via: JoinedVia::Founder,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::utc;
    use crate::storage::MemoryStorage;

    struct World {
        svc: Service,
        clock: Arc<ManualClock>,
        storage: Arc<MemoryStorage>,
        coord: PersonId,
        cid: CommunityId,
        venue: VenueId,
    }

    fn world() -> World {
        let storage = Arc::new(MemoryStorage::new());
        let clock = Arc::new(ManualClock::new(utc(2024, 6, 1, 8, 0)));
        let svc = Service::open(storage.clone(), clock.clone(), ServiceOptions::default()).unwrap();
        let coord = svc.create_person("Coordinator").unwrap().person.id;
        let cid = svc
            .create_community(&coord, NewCommunity {
                name: "Village".into(),
                timezone: chrono_tz::Asia::Bangkok,
                boundary_policy: None,
                settings: None,
            })
            .unwrap()
            .id;
        let venue = svc.create_venue(&coord, &cid, VenueDraft::named("Dome")).unwrap().id;
        World { svc, clock, storage, coord, cid, venue }
    }

    fn member(w: &World, name: &str) -> PersonId {
        let p = w.svc.create_person(name).unwrap().person.id;
        w.svc.join(&p, &w.cid, JoinBody::default()).unwrap();
        p
    }

    fn draft(w: &World, h: u32) -> EventDraft {
        EventDraft::new("Talk", utc(2024, 6, 2, h, 0), utc(2024, 6, 2, h + 1, 0), Location::Venue(w.venue.clone()))
    }

    #[test]
    fn create_then_collide() {
        let w = world();
        let p = member(&w, "Pat");
        let before = w.svc.feed(&w.cid, 0).unwrap().len();
        let created = w.svc.create_event(&p, &w.cid, draft(&w, 10)).unwrap();
        assert_eq!(created.event.created_by_role_snapshot, Role::Participant);
        let feed = w.svc.feed(&w.cid, 0).unwrap();
        assert_eq!(feed.len(), before + 1);
        assert_eq!(feed.last().unwrap().kind, FeedKind::Created);
        let err = w.svc.create_event(&p, &w.cid, draft(&w, 10)).unwrap_err();
        assert_eq!(err.http_status(), 409);
        match err {
            ServiceError::Conflict(c) => assert_eq!(c[0].conflicting_event_id.as_ref(), Some(&created.event.id)),
            other => panic!("{other:?}"),
        }
        assert_eq!(w.svc.feed(&w.cid, 0).unwrap().len(), before + 1);
    }

    #[test]
    fn feed_since_semantics() {
        let w = world();
        let latest = w.svc.feed(&w.cid, 0).unwrap().len() as u64;
        assert!(w.svc.feed(&w.cid, latest).unwrap().is_empty());
        for h in [9, 11, 13] {
            w.svc.create_event(&w.coord, &w.cid, draft(&w, h)).unwrap();
        }
        let tail = w.svc.feed(&w.cid, latest).unwrap();
        assert_eq!(tail.iter().map(|f| f.sequence).collect::<Vec<_>>(), vec![latest + 1, latest + 2, latest + 3]);
        let all = w.svc.feed(&w.cid, 0).unwrap();
        assert!(all.iter().enumerate().all(|(i, f)| f.sequence == i as u64 + 1));
    }

    #[test]
    fn unauthenticated_and_forbidden() {
        let w = world();
        let stranger = w.svc.create_person("Stranger").unwrap().person.id;
        let e = w.svc.create_event(&stranger, &w.cid, draft(&w, 10)).unwrap_err();
        assert_eq!(e.http_status(), 403);
        assert_eq!(w.svc.authenticate("nope").unwrap_err().http_status(), 401);
        let p = member(&w, "Pat");
        assert_eq!(w.svc.create_venue(&p, &w.cid, VenueDraft::named("x")).unwrap_err().http_status(), 403);
    }

    #[test]
    fn validation_is_422() {
        let w = world();
        let mut d = draft(&w, 10);
        d.title = " ".into();
        let e = w.svc.create_event(&w.coord, &w.cid, d).unwrap_err();
        assert_eq!(e.http_status(), 422);
        assert!(matches!(e, ServiceError::Invalid(r) if r.violations == vec![Violation::MissingWhat]));
    }

    #[test]
    fn session_roundtrip_and_expiry() {
        let w = world();
        let np = w.svc.create_person("Ana").unwrap();
        let grant = w.svc.claim_session(&np.claim_token).unwrap();
        assert_eq!(w.svc.authenticate(&grant.token).unwrap(), np.person.id);
        w.clock.advance(Duration::hours(73));
        assert!(w.svc.authenticate(&grant.token).is_err());
        assert!(w.svc.claim_session("bogus").is_err());
    }

    #[test]
    fn reschedule_with_revisions() {
        let w = world();
        let p = member(&w, "Pat");
        let e = w.svc.create_event(&p, &w.cid, draft(&w, 10)).unwrap().event;
        let other = w.svc.create_event(&w.coord, &w.cid, draft(&w, 14)).unwrap().event;
        let body = |rev, h: u32| RescheduleBody {
            expected_revision: rev,
            start: Some(utc(2024, 6, 2, h, 0)),
            end: Some(utc(2024, 6, 2, h + 1, 0)),
            location: None,
        };
        assert_eq!(w.svc.reschedule_event(&p, &w.cid, &e.id, body(1, 14)).unwrap_err().http_status(), 409);
        let moved = w.svc.reschedule_event(&p, &w.cid, &e.id, body(1, 16)).unwrap().event;
        assert_eq!((moved.revision, moved.state), (2, EventState::Rescheduled));
        let stale = w.svc.reschedule_event(&p, &w.cid, &e.id, body(1, 18)).unwrap_err();
        assert!(matches!(stale, ServiceError::StaleRevision { expected: 1, current: 2 }));
        // the old slot is free again
        w.svc.create_event(&w.coord, &w.cid, draft(&w, 10)).unwrap();
        // a participant cannot move someone else's event
        assert_eq!(w.svc.reschedule_event(&p, &w.cid, &other.id, body(1, 20)).unwrap_err().http_status(), 403);
        let kinds: Vec<FeedKind> = w.svc.feed(&w.cid, 0).unwrap().iter().map(|f| f.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == FeedKind::Rescheduled).count(), 1);
    }

    #[test]
    fn cancel_frees_slot() {
        let w = world();
        let e = w.svc.create_event(&w.coord, &w.cid, draft(&w, 10)).unwrap().event;
        w.svc.cancel_event(&w.coord, &w.cid, &e.id, Some(1)).unwrap();
        w.svc.create_event(&w.coord, &w.cid, draft(&w, 10)).unwrap();
    }

    #[test]
    fn rsvp_checkin_flow() {
        let w = world();
        let host = member(&w, "Host");
        let guest = member(&w, "Guest");
        let mut d = draft(&w, 10);
        d.rsvp_mode = Some(RsvpMode::RsvpTracked);
        let e = w.svc.create_event(&host, &w.cid, d).unwrap().event;
        assert!(w.svc.issue_checkin_token(&guest, &w.cid, &e.id).is_err());
        w.svc.set_rsvp(&guest, &w.cid, &e.id, RsvpState::Starred).unwrap();
        let n = w.svc.feed(&w.cid, 0).unwrap().len();
        // same state again is a no-op
        w.svc.set_rsvp(&guest, &w.cid, &e.id, RsvpState::Starred).unwrap();
        assert_eq!(w.svc.feed(&w.cid, 0).unwrap().len(), n);
        w.svc.set_rsvp(&guest, &w.cid, &e.id, RsvpState::Going).unwrap();
        let token = w.svc.issue_checkin_token(&guest, &w.cid, &e.id).unwrap();
        // another participant cannot scan
        let third = member(&w, "Third");
        assert_eq!(w.svc.checkin(&third, &w.cid, &e.id, &token).unwrap_err().http_status(), 403);
        w.clock.set(utc(2024, 6, 2, 10, 5));
        let first = w.svc.checkin(&host, &w.cid, &e.id, &token).unwrap();
        assert!(!first.duplicate);
        assert_eq!(first.record.state, RsvpState::CheckedIn);
        let again = w.svc.checkin(&host, &w.cid, &e.id, &token).unwrap();
        assert!(again.duplicate);
        let last = w.svc.feed(&w.cid, 0).unwrap().last().cloned().unwrap();
        assert_eq!(last.counts, Some(RsvpCounts { going: 1, starred: 0, checked_in: 1 }));
        let presence = w.svc.presence(None, &w.cid, &e.id).unwrap();
        assert_eq!(presence.checked_in_count, 1);
        assert!(presence.visible_names.is_empty());
        let presence = w.svc.presence(Some(&third), &w.cid, &e.id).unwrap();
        assert_eq!(presence.visible_names, vec!["Guest".to_string()]);
        // expired after end + grace
        w.clock.set(utc(2024, 6, 2, 13, 0));
        let t2 = {
            w.clock.set(utc(2024, 6, 2, 10, 30));
            w.svc.set_rsvp(&third, &w.cid, &e.id, RsvpState::Going).unwrap();
            let t = w.svc.issue_checkin_token(&third, &w.cid, &e.id).unwrap();
            w.clock.set(utc(2024, 6, 2, 13, 0));
            t
        };
        assert!(matches!(
            w.svc.checkin(&host, &w.cid, &e.id, &t2),
            Err(ServiceError::Participation(ParticipationError::Expired))
        ));
    }

    #[test]
    fn ticket_sellout() {
        let w = world();
        let mut d = draft(&w, 10);
        d.rsvp_mode = Some(RsvpMode::Ticketed);
        let e = w.svc.create_event(&w.coord, &w.cid, d).unwrap().event;
        let t = w
            .svc
            .create_ticket(&w.coord, &w.cid, &e.id, TicketDraft {
                price: Price::free(),
                quantity: NonZeroU32::new(1),
                required_badge: None,
            })
            .unwrap();
        let a = member(&w, "A");
        let b = member(&w, "B");
        assert!(matches!(
            w.svc.set_rsvp(&a, &w.cid, &e.id, RsvpState::Going),
            Err(ServiceError::Participation(ParticipationError::TicketRequired))
        ));
        assert_eq!(w.svc.claim_ticket(&a, &w.cid, &t.id).unwrap().state, RsvpState::Going);
        assert_eq!(w.svc.claim_ticket(&b, &w.cid, &t.id).unwrap_err().http_status(), 409);
        assert_eq!(w.svc.claim_ticket(&a, &w.cid, &t.id).unwrap_err().http_status(), 409);
    }

    #[test]
    fn invitation_and_peer_boundaries() {
        let w = world();
        w.svc
            .update_settings(&w.coord, &w.cid, None, Some(BoundaryPolicy {
                mode: BoundaryMode::InvitationToken,
                granted_role_on_join: Role::Member,
            }))
            .unwrap();
        let (_, token) = w.svc.issue_invitation(&w.coord, &w.cid, Some(1), None).unwrap();
        let a = w.svc.create_person("A").unwrap().person.id;
        let b = w.svc.create_person("B").unwrap().person.id;
        assert!(w.svc.join(&a, &w.cid, JoinBody::default()).is_err());
        let joined = w.svc.join(&a, &w.cid, JoinBody { invitation_token: Some(token.clone()), credential: None }).unwrap();
        assert!(matches!(joined, JoinOutcome::Joined { membership } if membership.role == Role::Member));
        let exhausted = w.svc.join(&b, &w.cid, JoinBody { invitation_token: Some(token), credential: None });
        assert!(matches!(exhausted, Err(ServiceError::Join(JoinError::ExhaustedToken))));

        w.svc
            .update_settings(&w.coord, &w.cid, None, Some(BoundaryPolicy {
                mode: BoundaryMode::PeerApproval { required_approvals: 2 },
                granted_role_on_join: Role::Participant,
            }))
            .unwrap();
        assert_eq!(w.svc.join(&b, &w.cid, JoinBody::default()).unwrap(), JoinOutcome::Pending { approvals: 0, required: 2 });
        assert_eq!(w.svc.approve_join(&a, &w.cid, &b).unwrap(), JoinOutcome::Pending { approvals: 1, required: 2 });
        let n = w.svc.feed(&w.cid, 0).unwrap().len();
        assert_eq!(w.svc.approve_join(&a, &w.cid, &b).unwrap(), JoinOutcome::Pending { approvals: 1, required: 2 });
        assert_eq!(w.svc.feed(&w.cid, 0).unwrap().len(), n);
        assert!(matches!(w.svc.approve_join(&w.coord, &w.cid, &b).unwrap(), JoinOutcome::Joined { .. }));
    }

    #[test]
    fn credential_boundary_uses_verifier() {
        let w = world();
        w.svc
            .update_settings(&w.coord, &w.cid, None, Some(BoundaryPolicy {
                mode: BoundaryMode::CredentialProof { verifier_id: "mock".into() },
                granted_role_on_join: Role::Participant,
            }))
            .unwrap();
        let a = w.svc.create_person("A").unwrap().person.id;
        let bad = JoinBody { invitation_token: None, credential: Some(CredentialDescriptor { scheme: "x".into(), data: "bm9wZQ".into() }) };
        assert!(matches!(w.svc.join(&a, &w.cid, bad), Err(ServiceError::Join(JoinError::VerifierRejected(_)))));
        let good = JoinBody { invitation_token: None, credential: Some(CredentialDescriptor { scheme: "x".into(), data: "dmFsaWQ".into() }) };
        assert!(matches!(w.svc.join(&a, &w.cid, good), Ok(JoinOutcome::Joined { .. })));
        let unknown = w.svc.update_settings(&w.coord, &w.cid, None, Some(BoundaryPolicy {
            mode: BoundaryMode::CredentialProof { verifier_id: "nope".into() },
            granted_role_on_join: Role::Participant,
        }));
        assert_eq!(unknown.unwrap_err().http_status(), 422);
    }

    #[test]
    fn failed_persistence_changes_nothing() {
        let w = world();
        let before = w.svc.snapshot(&w.cid).unwrap();
        let feed = w.svc.feed(&w.cid, 0).unwrap();
        w.storage.set_failing(true);
        assert_eq!(w.svc.create_event(&w.coord, &w.cid, draft(&w, 10)).unwrap_err().http_status(), 500);
        w.storage.set_failing(false);
        assert_eq!(w.svc.snapshot(&w.cid).unwrap(), before);
        assert_eq!(w.svc.feed(&w.cid, 0).unwrap(), feed);
        w.svc.create_event(&w.coord, &w.cid, draft(&w, 10)).unwrap();
    }

    #[test]
    fn restart_keeps_committed_state() {
        let w = world();
        let p = member(&w, "Pat");
        let e = w.svc.create_event(&p, &w.cid, draft(&w, 10)).unwrap().event;
        w.svc.set_rsvp(&w.coord, &w.cid, &e.id, RsvpState::Going).unwrap();
        let bytes = w.svc.export(&w.coord, &w.cid, ExportScope::Full).unwrap().to_file_bytes();
        let reopened = Service::open(w.storage.clone(), w.clock.clone(), ServiceOptions::default()).unwrap();
        assert_eq!(reopened.snapshot(&w.cid).unwrap(), w.svc.snapshot(&w.cid).unwrap());
        assert_eq!(reopened.export(&w.coord, &w.cid, ExportScope::Full).unwrap().to_file_bytes(), bytes);
        // the booking index is rebuilt on load
        assert!(matches!(reopened.create_event(&p, &w.cid, draft(&w, 10)), Err(ServiceError::Conflict(_))));
    }

    #[test]
    fn import_export_through_service() {
        let w = world();
        let p = member(&w, "Pat");
        let e = w.svc.create_event(&p, &w.cid, draft(&w, 10)).unwrap().event;
        w.svc.set_rsvp(&w.coord, &w.cid, &e.id, RsvpState::Starred).unwrap();
        let bytes = w.svc.export(&w.coord, &w.cid, ExportScope::Full).unwrap().to_file_bytes();
        let report = w.svc.import(Some(&p), &bytes).unwrap();
        assert_eq!(report.claim_tokens.len(), 2);
        assert_ne!(report.community.id, w.cid);
        // a claimed identity from the import can export again
        let coord_new = report.mapping.persons[&PersonId::from("person-1")].clone();
        let again = w.svc.export(&coord_new, &report.community.id, ExportScope::Full).unwrap().to_file_bytes();
        assert_eq!(again, bytes);
        assert_eq!(w.svc.feed(&report.community.id, 0).unwrap()[0].kind, FeedKind::Imported);

        let fork = w.svc.fork(Some(&p), &bytes, "Next", ForkOptions::default()).unwrap();
        let m = w.svc.membership(&fork.community.id, &p).unwrap().unwrap();
        assert_eq!(m.role, Role::Coordinator);
        assert!(w.svc.snapshot(&fork.community.id).unwrap().events.is_empty());
    }

    #[test]
    fn listings_respect_visibility() {
        let w = world();
        let p = member(&w, "Pat");
        let mut d = draft(&w, 10);
        d.visibility = Some(Visibility::MembersOnly);
        w.svc.create_event(&p, &w.cid, d).unwrap();
        let mut d = draft(&w, 12);
        d.visibility = Some(Visibility::Unlisted);
        let unlisted = w.svc.create_event(&p, &w.cid, d).unwrap().event;
        w.svc.create_event(&p, &w.cid, draft(&w, 14)).unwrap();
        let count = |viewer: Option<&PersonId>| {
            w.svc
                .schedule(viewer, &w.cid, &ScheduleFilter::default(), ViewMode::List)
                .unwrap()
                .buckets
                .iter()
                .map(|b| b.events.len())
                .sum::<usize>()
        };
        let other = member(&w, "Other");
        assert_eq!(count(None), 1);
        assert_eq!(count(Some(&other)), 2);
        assert_eq!(count(Some(&p)), 3);
        // unlisted is still reachable by id
        assert!(w.svc.event(None, &w.cid, &unlisted.id).is_ok());
    }

    #[test]
    fn concurrent_creates_never_double_book() {
        let w = Arc::new(world());
        let hosts: Vec<PersonId> = (0..8).map(|i| member(&w, &format!("h{i}"))).collect();
        let threads: Vec<_> = (0..50)
            .map(|i| {
                let w = w.clone();
                let host = hosts[i % hosts.len()].clone();
                std::thread::spawn(move || {
                    let start = utc(2024, 6, 2, 10, 0) + Duration::minutes((i % 5) as i64 * 20);
                    let d = EventDraft::new("Race", start, start + Duration::minutes(45), Location::Venue(w.venue.clone()));
                    w.svc.create_event(&host, &w.cid, d).is_ok()
                })
            })
            .collect();
        let wins = threads.into_iter().map(|t| t.join().unwrap()).filter(|ok| *ok).count();
        let events = w.svc.snapshot(&w.cid).unwrap().events;
        assert_eq!(events.len(), wins);
        for (i, a) in events.iter().enumerate() {
            for b in &events[i + 1..] {
                assert!(!crate::scheduling::intervals_overlap(&a.interval, &b.interval), "{} and {} overlap", a.id, b.id);
            }
        }
        let feed = w.svc.feed(&w.cid, 0).unwrap();
        assert!(feed.iter().enumerate().all(|(i, f)| f.sequence == i as u64 + 1));
    }

    #[test]
    fn file_storage_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(utc(2024, 6, 1, 8, 0)));
        let open = || {
            let storage = Arc::new(crate::storage::FileStorage::open(dir.path()).unwrap());
            Service::open(storage, clock.clone(), ServiceOptions::default()).unwrap()
        };
        let svc = open();
        let np = svc.create_person("Ana").unwrap();
        let cid = svc
            .create_community(&np.person.id, NewCommunity {
                name: "Camp".into(),
                timezone: chrono_tz::Europe::Lisbon,
                boundary_policy: None,
                settings: None,
            })
            .unwrap()
            .id;
        let v = svc.create_venue(&np.person.id, &cid, VenueDraft::named("Hall")).unwrap().id;
        let start = utc(2024, 6, 2, 10, 0);
        let e = svc
            .create_event(&np.person.id, &cid, EventDraft::new("Talk", start, start + Duration::hours(1), Location::Venue(v)))
            .unwrap()
            .event;
        svc.set_rsvp(&np.person.id, &cid, &e.id, RsvpState::Going).unwrap();
        let token = svc.issue_checkin_token(&np.person.id, &cid, &e.id).unwrap();
        let bytes = svc.export(&np.person.id, &cid, ExportScope::Full).unwrap().to_file_bytes();
        drop(svc);

        let svc = open();
        assert_eq!(svc.export(&np.person.id, &cid, ExportScope::Full).unwrap().to_file_bytes(), bytes);
        // the signing secret survived, so the earlier token still verifies
        clock.set(start);
        assert!(!svc.checkin(&np.person.id, &cid, &e.id, &token).unwrap().duplicate);
        let grant = svc.claim_session(&np.claim_token).unwrap();
        assert_eq!(svc.authenticate(&grant.token).unwrap(), np.person.id);
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let key = dir.path().join("secrets").join(format!("{cid}.key"));
            assert_eq!(std::fs::metadata(key).unwrap().permissions().mode() & 0o777, 0o600);
        }
    }
}
