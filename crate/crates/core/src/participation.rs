//! RSVP, star and check-in lifecycle; signed check-in tokens; presence cues;
//! tickets and badges.

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::access::Role;
use crate::model::{Badge, Event, EventId, PersonId, RsvpMode, Ticket, TicketId};

/// Commitment levels on one axis: a star is weaker than going.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsvpState {
    None,
    Starred,
    Going,
    CheckedIn,
}

impl RsvpState {
    pub const ALL: [RsvpState; 4] = [RsvpState::None, RsvpState::Starred, RsvpState::Going, RsvpState::CheckedIn];

    /// Going or checked in: counts as attendance.
    pub fn is_attending(self) -> bool {
        matches!(self, RsvpState::Going | RsvpState::CheckedIn)
    }
}

/// The legal transition table for self-service RSVP changes. Same-state
/// requests are handled separately as no-ops.
pub fn is_legal_transition(from: RsvpState, to: RsvpState) -> bool {
    use RsvpState::*;
    matches!(
        (from, to),
        (None, Starred) | (None, Going) | (Starred, Going) | (Going, CheckedIn) | (Starred, None) | (Going, None)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub state: RsvpState,
    pub at: DateTime<Utc>,
}

/// At most one per `(person, event)`. `state_history` is append-only and
/// strictly increasing in time; its last entry is the current state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationRecord {
    pub person_id: PersonId,
    pub event_id: EventId,
    pub state: RsvpState,
    pub ticket_id: Option<TicketId>,
    pub updated_at: DateTime<Utc>,
    pub state_history: Vec<StateChange>,
}

impl ParticipationRecord {
    pub fn new(person_id: PersonId, event_id: EventId, now: DateTime<Utc>) -> Self {
        Self {
            person_id,
            event_id,
            state: RsvpState::None,
            ticket_id: None,
            updated_at: now,
            state_history: Vec::new(),
        }
    }

    fn push(&mut self, state: RsvpState, now: DateTime<Utc>) {
        let at = match self.state_history.last() {
            Some(prev) if now <= prev.at => prev.at + Duration::microseconds(1),
            _ => now,
        };
        self.state = state;
        self.updated_at = at;
        self.state_history.push(StateChange { state, at });
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParticipationError {
    #[error("cannot move from {from:?} to {to:?}")]
    IllegalTransition { from: RsvpState, to: RsvpState },
    #[error("a claimed ticket is required to attend this event")]
    TicketRequired,
    #[error("not allowed to see this event")]
    VisibilityDenied,
    #[error("check-in is not enabled for this event")]
    CheckinDisabled,
    #[error("no RSVP on record and the event is not drop-in")]
    NotRsvped,
    #[error("malformed check-in token")]
    MalformedToken,
    #[error("check-in token signature does not verify")]
    BadSignature,
    #[error("check-in token has expired")]
    Expired,
    #[error("token belongs to a different event")]
    WrongEvent,
    #[error("ticket sold out")]
    SoldOut,
    #[error("ticket requires badge {0}")]
    QualificationMissing(String),
    #[error("ticket already claimed by this person")]
    AlreadyClaimed,
    #[error("only facilitators and coordinators may grant badges")]
    PermissionDenied,
}

/// Applies a self-service RSVP change. Returns the updated record; when the
/// target equals the current state the record comes back unchanged.
pub fn apply_rsvp(
    current: Option<&ParticipationRecord>,
    person: &PersonId,
    event: &Event,
    target: RsvpState,
    now: DateTime<Utc>,
) -> Result<ParticipationRecord, ParticipationError> {
    let mut record = current
        .cloned()
        .unwrap_or_else(|| ParticipationRecord::new(person.clone(), event.id.clone(), now));
    if record.state == target {
        return Ok(record);
    }
    if !is_legal_transition(record.state, target) {
        return Err(ParticipationError::IllegalTransition { from: record.state, to: target });
    }
    if event.rsvp_mode == RsvpMode::Ticketed && target == RsvpState::Going && record.ticket_id.is_none() {
        return Err(ParticipationError::TicketRequired);
    }
    record.push(target, now);
    Ok(record)
}

/// Coordinator-initiated undo of a check-in: back to going.
pub fn revoke_checkin(record: &ParticipationRecord, now: DateTime<Utc>) -> Result<ParticipationRecord, ParticipationError> {
    if record.state != RsvpState::CheckedIn {
        return Err(ParticipationError::IllegalTransition { from: record.state, to: RsvpState::Going });
    }
    let mut out = record.clone();
    out.push(RsvpState::Going, now);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckinOutcome {
    pub record: ParticipationRecord,
    /// The person was already checked in; nothing changed.
    pub duplicate: bool,
}

/// Moves a record to checked-in on a verified scan. Drop-in events admit
/// people with no RSVP by passing through `going` first.
pub fn apply_checkin(
    current: Option<&ParticipationRecord>,
    person: &PersonId,
    event: &Event,
    now: DateTime<Utc>,
) -> Result<CheckinOutcome, ParticipationError> {
    let mut record = current
        .cloned()
        .unwrap_or_else(|| ParticipationRecord::new(person.clone(), event.id.clone(), now));
    match record.state {
        RsvpState::CheckedIn => return Ok(CheckinOutcome { record, duplicate: true }),
        RsvpState::Going => {}
        RsvpState::Starred | RsvpState::None => {
            let walk_in = event.rsvp_mode == RsvpMode::OpenDropIn;
            if !(walk_in || record.state == RsvpState::Starred && event.rsvp_mode == RsvpMode::RsvpTracked) {
                return Err(if event.rsvp_mode == RsvpMode::Ticketed && record.ticket_id.is_none() {
                    ParticipationError::TicketRequired
                } else {
                    ParticipationError::NotRsvped
                });
            }
            record.push(RsvpState::Going, now);
        }
    }
    record.push(RsvpState::CheckedIn, now);
    Ok(CheckinOutcome { record, duplicate: false })
}

/// Whether a token may be minted for someone currently in `state`.
pub fn token_eligible(event: &Event, state: RsvpState) -> bool {
    match state {
        RsvpState::Going | RsvpState::Starred | RsvpState::CheckedIn => true,
        RsvpState::None => event.rsvp_mode == RsvpMode::OpenDropIn,
    }
}

type HmacSha256 = Hmac<Sha256>;

/// Per-community key for check-in MACs. Rotating it voids every outstanding token.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommunitySecret(String);

impl CommunitySecret {
    pub fn generate() -> Self {
        let mut key = [0u8; 32];
        rand::rng().fill_bytes(&mut key);
        Self(URL_SAFE_NO_PAD.encode(key))
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(URL_SAFE_NO_PAD.encode(bytes))
    }

    fn key(&self) -> Vec<u8> {
        URL_SAFE_NO_PAD.decode(&self.0).unwrap_or_else(|_| self.0.as_bytes().to_vec())
    }
}

impl std::fmt::Debug for CommunitySecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CommunitySecret(<redacted>)")
    }
}

/// Signed payload of a check-in QR code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckInToken {
    pub event_id: EventId,
    pub person_id: PersonId,
    pub issued_at: DateTime<Utc>,
    /// base64url of 96 random bits.
    pub nonce: String,
}

impl CheckInToken {
    /// MAC input: each field length-prefixed, in order event, person, issued_at, nonce.
    fn mac_input(&self) -> Vec<u8> {
        let issued = crate::canonical::format_instant(self.issued_at);
        let mut buf = Vec::new();
        for part in [self.event_id.as_str(), self.person_id.as_str(), issued.as_str(), self.nonce.as_str()] {
            buf.extend_from_slice(&(part.len() as u32).to_be_bytes());
            buf.extend_from_slice(part.as_bytes());
        }
        buf
    }

    fn mac(&self, secret: &CommunitySecret) -> Vec<u8> {
        let mut mac = HmacSha256::new_from_slice(&secret.key()).expect("HMAC accepts any key length");
        mac.update(&self.mac_input());
        mac.finalize().into_bytes().to_vec()
    }

    /// Wire form: `base64url(canonical JSON payload) "." base64url(mac)`.
    pub fn encode(&self, secret: &CommunitySecret) -> String {
        let payload = crate::canonical::to_canonical_vec(self).expect("token payload serializes");
        format!("{}.{}", URL_SAFE_NO_PAD.encode(payload), URL_SAFE_NO_PAD.encode(self.mac(secret)))
    }
}

/// Mints a token for `(event, person)` at `now`.
pub fn generate_checkin_token(
    event: &Event,
    person: &PersonId,
    secret: &CommunitySecret,
    now: DateTime<Utc>,
) -> Result<String, ParticipationError> {
    if !event.checkin_enabled {
        return Err(ParticipationError::CheckinDisabled);
    }
    let mut nonce = [0u8; 12];
    rand::rng().fill_bytes(&mut nonce);
    let token = CheckInToken {
        event_id: event.id.clone(),
        person_id: person.clone(),
        issued_at: now,
        nonce: URL_SAFE_NO_PAD.encode(nonce),
    };
    Ok(token.encode(secret))
}

/// Parses and authenticates a token without checking expiry.
pub fn decode_checkin_token(text: &str, secret: &CommunitySecret) -> Result<CheckInToken, ParticipationError> {
    let (payload_b64, mac_b64) = text.trim().split_once('.').ok_or(ParticipationError::MalformedToken)?;
    let payload = URL_SAFE_NO_PAD.decode(payload_b64).map_err(|_| ParticipationError::MalformedToken)?;
    let mac = URL_SAFE_NO_PAD.decode(mac_b64).map_err(|_| ParticipationError::MalformedToken)?;
    let token: CheckInToken = serde_json::from_slice(&payload).map_err(|_| ParticipationError::MalformedToken)?;
    // any non-canonical payload is a forgery even if its fields parse
    if crate::canonical::to_canonical_vec(&token).ok().as_deref() != Some(payload.as_slice()) {
        return Err(ParticipationError::MalformedToken);
    }
    let mut check = HmacSha256::new_from_slice(&secret.key()).expect("HMAC accepts any key length");
    check.update(&token.mac_input());
    check.verify_slice(&mac).map_err(|_| ParticipationError::BadSignature)?;
    Ok(token)
}

/// Full verification: signature, event match, and the validity window that
/// closes `grace` after the event ends.
pub fn verify_checkin_token(
    text: &str,
    secret: &CommunitySecret,
    event: &Event,
    grace: Duration,
    now: DateTime<Utc>,
) -> Result<CheckInToken, ParticipationError> {
    let token = decode_checkin_token(text, secret)?;
    if token.event_id != event.id {
        return Err(ParticipationError::WrongEvent);
    }
    if now >= event.interval.end + grace {
        return Err(ParticipationError::Expired);
    }
    Ok(token)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceSummary {
    /// Going or checked in.
    pub going_count: usize,
    pub starred_count: usize,
    pub checked_in_count: usize,
    /// Attending names, sorted; empty for guests.
    pub visible_names: Vec<String>,
}

/// Counts per state, with names revealed only to members (role above guest).
pub fn presence_summary<'a>(
    records: impl IntoIterator<Item = &'a ParticipationRecord>,
    viewer_role: Role,
    display_name: impl Fn(&PersonId) -> Option<String>,
) -> PresenceSummary {
    let mut summary = PresenceSummary::default();
    let mut names = Vec::new();
    for r in records {
        match r.state {
            RsvpState::Starred => summary.starred_count += 1,
            RsvpState::Going => summary.going_count += 1,
            RsvpState::CheckedIn => {
                summary.going_count += 1;
                summary.checked_in_count += 1;
            }
            RsvpState::None => {}
        }
        if r.state.is_attending() && viewer_role > Role::Guest {
            if let Some(name) = display_name(&r.person_id) {
                names.push(name);
            }
        }
    }
    names.sort();
    summary.visible_names = names;
    summary
}

/// Tags shared between the viewer's own RSVPs and those of this event's
/// attendees. A gentle "mutual topic" cue; empty when nothing overlaps.
pub fn mutual_topics(viewer_tags: &BTreeSet<String>, attendee_tags: &BTreeSet<String>) -> BTreeSet<String> {
    viewer_tags.intersection(attendee_tags).cloned().collect()
}

/// Claims one unit of `ticket`. The caller links the ticket to the claimant's
/// participation record within the same transaction.
pub fn claim_ticket(ticket: &mut Ticket, holder_badges: &BTreeSet<String>) -> Result<(), ParticipationError> {
    if let Some(required) = &ticket.required_badge {
        if !holder_badges.contains(required) {
            return Err(ParticipationError::QualificationMissing(required.clone()));
        }
    }
    if ticket.remaining() == Some(0) {
        return Err(ParticipationError::SoldOut);
    }
    ticket.claimed += 1;
    Ok(())
}

/// Badge template filled in by a facilitator or coordinator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadgeSpec {
    pub name: String,
    pub issued_to: PersonId,
    pub issued_for: Option<EventId>,
}

pub fn grant_badge(
    granter_role: Role,
    spec: BadgeSpec,
    community_id: crate::model::CommunityId,
    now: DateTime<Utc>,
) -> Result<Badge, ParticipationError> {
    if granter_role < Role::Facilitator {
        return Err(ParticipationError::PermissionDenied);
    }
    Ok(Badge {
        id: crate::model::BadgeId::random(),
        community_id,
        name: spec.name,
        issued_to: spec.issued_to,
        issued_for: spec.issued_for,
        issued_at: now,
    })
}

/// Badge names held per person.
pub fn badges_by_holder<'a>(badges: impl IntoIterator<Item = &'a Badge>) -> BTreeMap<PersonId, BTreeSet<String>> {
    let mut out: BTreeMap<PersonId, BTreeSet<String>> = BTreeMap::new();
    for b in badges {
        out.entry(b.issued_to.clone()).or_default().insert(b.name.clone());
    }
    out
}
