//! Roles, permission resolution, and boundary policies that decide who may
//! join a community.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::process::{Command, Stdio};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::model::{
    CommunityId, CommunitySettings, Event, EventState, InvitationId, PersonId, ProgramId,
    Visibility,
};

/// Ordered roles: `guest < participant < member < facilitator < coordinator`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Guest,
    Participant,
    Member,
    Facilitator,
    Coordinator,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Guest, Role::Participant, Role::Member, Role::Facilitator, Role::Coordinator];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinedVia {
    Open,
    Invitation,
    PeerApproval,
    Credential,
    /// Created the community or forked it.
    Founder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub person_id: PersonId,
    pub community_id: CommunityId,
    pub role: Role,
    pub program_overrides: BTreeMap<ProgramId, Role>,
    pub joined_at: DateTime<Utc>,
    pub joined_via: JoinedVia,
}

impl Membership {
    /// Role in `program` if overridden there, else the community role.
    pub fn effective_role(&self, program: Option<&ProgramId>) -> Role {
        program
            .and_then(|p| self.program_overrides.get(p))
            .copied()
            .unwrap_or(self.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundaryMode {
    OpenRegistration,
    InvitationToken,
    PeerApproval { required_approvals: u32 },
    CredentialProof { verifier_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPolicy {
    #[serde(flatten)]
    pub mode: BoundaryMode,
    pub granted_role_on_join: Role,
}

impl BoundaryPolicy {
    pub fn open() -> Self {
        Self { mode: BoundaryMode::OpenRegistration, granted_role_on_join: Role::Participant }
    }

    pub fn is_valid(&self) -> bool {
        !matches!(self.mode, BoundaryMode::PeerApproval { required_approvals: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    CreateEvent,
    EditEvent,
    CancelEvent,
    CreateVenue,
    EditSettings,
    ExportData,
    CheckinOthers,
    ViewEvent,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::CreateEvent,
        Action::EditEvent,
        Action::CancelEvent,
        Action::CreateVenue,
        Action::EditSettings,
        Action::ExportData,
        Action::CheckinOthers,
        Action::ViewEvent,
    ];
}

/// Who is asking. Non-members act as guests.
#[derive(Debug, Clone, Copy)]
pub enum Actor<'a> {
    Guest,
    Member(&'a Membership),
}

impl Actor<'_> {
    pub fn person(&self) -> Option<&PersonId> {
        match self {
            Actor::Guest => None,
            Actor::Member(m) => Some(&m.person_id),
        }
    }
}

/// The event an action targets, reduced to what permission checks read.
#[derive(Debug, Clone, Copy)]
pub struct EventContext<'a> {
    pub host: &'a PersonId,
    pub co_hosts: &'a BTreeSet<PersonId>,
    pub visibility: Visibility,
    pub cancelled: bool,
}

impl<'a> From<&'a Event> for EventContext<'a> {
    fn from(e: &'a Event) -> Self {
        Self {
            host: &e.host_id,
            co_hosts: &e.co_hosts,
            visibility: e.visibility,
            cancelled: e.state == EventState::Cancelled,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ResourceContext<'a> {
    pub program: Option<&'a ProgramId>,
    pub event: Option<EventContext<'a>>,
}

impl<'a> ResourceContext<'a> {
    pub fn for_event(event: &'a Event) -> Self {
        Self { program: event.program_id.as_ref(), event: Some(event.into()) }
    }

    pub fn for_program(program: Option<&'a ProgramId>) -> Self {
        Self { program, event: None }
    }
}

/// Resolves a permission against the default matrix:
///
/// | action          | allowed when                                   |
/// |-----------------|------------------------------------------------|
/// | create_event    | role ≥ `who_can_create_events`                 |
/// | edit/cancel     | role ≥ facilitator, or host/co-host of a live event |
/// | create_venue    | role ≥ `who_can_create_venues`                 |
/// | edit_settings   | role ≥ coordinator                             |
/// | export_data     | role ≥ coordinator                             |
/// | checkin_others  | role ≥ facilitator, or host/co-host            |
/// | view_event      | public/unlisted: anyone; members_only: role ≥ participant or host |
///
/// The role consulted is the program override when the context names a program.
pub fn can(actor: Actor<'_>, action: Action, ctx: &ResourceContext<'_>, settings: &CommunitySettings) -> bool {
    let role = match actor {
        Actor::Guest => Role::Guest,
        Actor::Member(m) => m.effective_role(ctx.program),
    };
    let hosts = match (actor.person(), ctx.event) {
        (Some(p), Some(ev)) => ev.host == p || ev.co_hosts.contains(p),
        _ => false,
    };
    let live_host = hosts && ctx.event.is_some_and(|ev| !ev.cancelled);
    match action {
        Action::CreateEvent => role >= settings.who_can_create_events,
        Action::EditEvent | Action::CancelEvent => role >= Role::Facilitator || live_host,
        Action::CreateVenue => role >= settings.who_can_create_venues,
        Action::EditSettings | Action::ExportData => role >= Role::Coordinator,
        Action::CheckinOthers => role >= Role::Facilitator || hosts,
        Action::ViewEvent => match ctx.event.map(|e| e.visibility) {
            Some(Visibility::MembersOnly) => role >= Role::Participant || hosts,
            _ => true,
        },
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JoinError {
    #[error("already a member")]
    DuplicateMembership,
    #[error("invitation token is invalid")]
    InvalidToken,
    #[error("invitation token has expired")]
    ExpiredToken,
    #[error("invitation token has no remaining uses")]
    ExhaustedToken,
    #[error("approval pending: {have} of {need} distinct approvals")]
    InsufficientApprovals { have: u32, need: u32 },
    #[error("approver must hold role member or above")]
    ApproverNotEligible,
    #[error("credential rejected by verifier {0}")]
    VerifierRejected(String),
    #[error("no verifier registered under {0}")]
    UnknownVerifier(String),
    #[error("credential required for this community")]
    CredentialMissing,
}

/// Invitation as persisted: the token itself is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invitation {
    pub id: InvitationId,
    pub community_id: CommunityId,
    /// base64url salt.
    pub salt: String,
    /// hex SHA-256 of `salt || token`.
    pub token_hash: String,
    /// `None` = unlimited.
    pub max_uses: Option<u32>,
    pub uses: u32,
    pub expires_at: Option<DateTime<Utc>>,
    pub issued_by: PersonId,
}

/// Bytes of entropy in an invitation token (256 bits).
pub const TOKEN_BYTES: usize = 32;

/// Fresh bearer token from the thread-local CSPRNG (OS-seeded ChaCha), base64url without padding.
pub fn random_token(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    URL_SAFE_NO_PAD.encode(buf)
}

fn salted_hash(salt: &str, token: &str) -> String {
    crate::canonical::sha256_hex(format!("{salt}{token}").as_bytes())
}

impl Invitation {
    /// Mints an invitation and returns it together with the plaintext token.
    /// The plaintext is not recoverable afterwards.
    pub fn issue(
        community_id: CommunityId,
        issued_by: PersonId,
        max_uses: Option<u32>,
        expires_at: Option<DateTime<Utc>>,
    ) -> (Self, String) {
        let token = random_token(TOKEN_BYTES);
        let salt = random_token(16);
        let token_hash = salted_hash(&salt, &token);
        let inv = Self {
            id: InvitationId::random(),
            community_id,
            salt,
            token_hash,
            max_uses,
            uses: 0,
            expires_at,
            issued_by,
        };
        (inv, token)
    }

    pub fn matches(&self, token: &str) -> bool {
        let candidate = salted_hash(&self.salt, token);
        candidate.as_bytes().ct_eq(self.token_hash.as_bytes()).into()
    }

    /// Checks expiry and remaining uses, then consumes one use.
    pub fn redeem(&mut self, now: DateTime<Utc>) -> Result<(), JoinError> {
        if self.expires_at.is_some_and(|exp| now >= exp) {
            return Err(JoinError::ExpiredToken);
        }
        if self.max_uses.is_some_and(|max| self.uses >= max) {
            return Err(JoinError::ExhaustedToken);
        }
        self.uses += 1;
        Ok(())
    }
}

/// Finds the invitation matching `token` and redeems it.
pub fn redeem_invitation(invitations: &mut [Invitation], token: &str, now: DateTime<Utc>) -> Result<(), JoinError> {
    invitations
        .iter_mut()
        .find(|inv| inv.matches(token))
        .ok_or(JoinError::InvalidToken)?
        .redeem(now)
}

/// Pending peer-approval request. Approvals are a set, so repeats from one
/// member never count twice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub applicant: PersonId,
    pub approvals: BTreeSet<PersonId>,
    pub requested_at: DateTime<Utc>,
}

impl JoinRequest {
    pub fn new(applicant: PersonId, requested_at: DateTime<Utc>) -> Self {
        Self { applicant, approvals: BTreeSet::new(), requested_at }
    }

    /// Records an approval. Returns whether the threshold is now met.
    pub fn approve(&mut self, approver: &Membership, required: u32) -> Result<bool, JoinError> {
        if approver.role < Role::Member || approver.person_id == self.applicant {
            return Err(JoinError::ApproverNotEligible);
        }
        self.approvals.insert(approver.person_id.clone());
        Ok(self.is_satisfied(required))
    }

    pub fn is_satisfied(&self, required: u32) -> bool {
        self.approvals.len() as u64 >= u64::from(required)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRequest {
    pub scheme: String,
    /// base64url credential bytes, passed through untouched.
    pub descriptor: String,
    /// Badge names the applicant already holds, readable by verifiers.
    #[serde(default)]
    pub holder_badges: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResponse {
    pub decision: Decision,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl VerificationResponse {
    pub fn accept() -> Self {
        Self { decision: Decision::Accept, attributes: BTreeMap::new() }
    }

    pub fn reject() -> Self {
        Self { decision: Decision::Reject, attributes: BTreeMap::new() }
    }
}

/// Pluggable proof-of-participation check.
pub trait CredentialVerifier: Send + Sync {
    fn verify(&self, request: &VerificationRequest) -> VerificationResponse;
}

/// Accepts descriptors whose raw bytes decode to `valid`. For tests and demos.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockVerifier;

impl CredentialVerifier for MockVerifier {
    fn verify(&self, request: &VerificationRequest) -> VerificationResponse {
        match URL_SAFE_NO_PAD.decode(&request.descriptor) {
            Ok(bytes) if bytes == b"valid" => {
                let mut resp = VerificationResponse::accept();
                resp.attributes.insert("scheme".into(), request.scheme.clone());
                resp
            }
            _ => VerificationResponse::reject(),
        }
    }
}

/// Accepts exactly the listed `(scheme, descriptor)` pairs.
#[derive(Debug, Default, Clone)]
pub struct AllowlistVerifier {
    allowed: BTreeSet<(String, String)>,
}

impl AllowlistVerifier {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Self { allowed: entries.into_iter().map(|(a, b)| (a.into(), b.into())).collect() }
    }
}

impl CredentialVerifier for AllowlistVerifier {
    fn verify(&self, request: &VerificationRequest) -> VerificationResponse {
        if self.allowed.contains(&(request.scheme.clone(), request.descriptor.clone())) {
            VerificationResponse::accept()
        } else {
            VerificationResponse::reject()
        }
    }
}

/// External verifier speaking JSON over stdin/stdout: one request object in,
/// one response object out. Any spawn, I/O or parse failure is a reject.
#[derive(Debug, Clone)]
pub struct SubprocessVerifier {
    pub program: String,
    pub args: Vec<String>,
}

impl SubprocessVerifier {
    fn run(&self, request: &VerificationRequest) -> std::io::Result<VerificationResponse> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let payload = crate::canonical::to_canonical_vec(request)?;
        if let Some(mut stdin) = child.stdin.take() {
            stdin.write_all(&payload)?;
            stdin.write_all(b"\n")?;
        }
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Ok(VerificationResponse::reject());
        }
        Ok(serde_json::from_slice(&out.stdout)?)
    }
}

impl CredentialVerifier for SubprocessVerifier {
    fn verify(&self, request: &VerificationRequest) -> VerificationResponse {
        self.run(request).unwrap_or_else(|_| VerificationResponse::reject())
    }
}

/// Verifiers addressable by the id a boundary policy names.
#[derive(Default)]
pub struct VerifierRegistry {
    verifiers: BTreeMap<String, Box<dyn CredentialVerifier>>,
}

impl VerifierRegistry {
    /// Registry pre-loaded with the mock verifier under `mock`.
    pub fn with_defaults() -> Self {
        let mut reg = Self::default();
        reg.register("mock", MockVerifier);
        reg
    }

    pub fn register(&mut self, id: impl Into<String>, verifier: impl CredentialVerifier + 'static) {
        self.verifiers.insert(id.into(), Box::new(verifier));
    }

    pub fn contains(&self, verifier_id: &str) -> bool {
        self.verifiers.contains_key(verifier_id)
    }

    pub fn verify(&self, verifier_id: &str, request: &VerificationRequest) -> Result<VerificationResponse, JoinError> {
        let v = self
            .verifiers
            .get(verifier_id)
            .ok_or_else(|| JoinError::UnknownVerifier(verifier_id.to_owned()))?;
        Ok(v.verify(request))
    }
}

impl std::fmt::Debug for VerifierRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.verifiers.keys()).finish()
    }
}
