//! Deterministic sample data.
//!
//! [`deployment_rows`] lists the five reference deployments; [`synthetic_deployment`]
//! builds an event log for a row whose statistics reproduce it exactly, with
//! some noise (cancelled and draft events, starred-only RSVPs, events outside
//! the window) that the statistics must ignore. [`random_community`] produces
//! arbitrary but internally consistent communities for property tests.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroU32;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;
use rand::seq::IndexedRandom;
use rand::Rng;
use rust_decimal::Decimal;

use crate::access::{BoundaryMode, BoundaryPolicy, Invitation, JoinedVia, Membership, Role};
use crate::analytics::DeploymentStats;
use crate::model::{
    Badge, BadgeId, Community, CommunityId, CommunitySettings, CredentialDescriptor, DateRange, Day, Event,
    EventChange, EventId, EventState, Geo, HistoryEntry, HoursSpan, Location, Person, PersonId, Price,
    Program, ProgramId, RsvpMode, Ticket, TicketId, TimeInterval, Venue, VenueId, Visibility, WeeklyHours,
};
use crate::participation::{ParticipationRecord, RsvpState, StateChange};
use crate::portability::CommunityData;

/// One reference deployment and the summary its log must reproduce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeploymentRow {
    pub name: &'static str,
    pub timezone: Tz,
    pub start: (i32, u32, u32),
    pub duration_days: i64,
    pub events: u64,
    pub self_organized: u64,
    pub hosts: u64,
    pub participants: u64,
    pub instances: u64,
}

impl DeploymentRow {
    pub fn expected(&self) -> DeploymentStats {
        DeploymentStats {
            duration_days: self.duration_days,
            events_total: self.events,
            self_organized_count: self.self_organized,
            self_organized_ratio: self.self_organized as f64 / self.events as f64,
            unique_hosts: self.hosts,
            unique_participants: self.participants,
            participation_instances: self.instances,
        }
    }
}

pub fn deployment_rows() -> [DeploymentRow; 5] {
    use chrono_tz::{America, Asia, Europe};
    let row = |name, timezone, start, duration_days, events, self_organized, hosts, participants, instances| {
        DeploymentRow { name, timezone, start, duration_days, events, self_organized, hosts, participants, instances }
    };
    [
        row("Shanhaiwoo", Asia::Shanghai, (2024, 4, 6), 27, 133, 126, 40, 102, 915),
        row("muChiangmai", Asia::Bangkok, (2023, 11, 1), 47, 118, 46, 25, 120, 571),
        row("Edge Esmeralda", America::Los_Angeles, (2024, 6, 1), 28, 554, 405, 136, 582, 4952),
        row("Aleph", America::Argentina::Buenos_Aires, (2024, 8, 1), 28, 417, 173, 86, 889, 4496),
        row("Gathering of Tribe", Europe::Lisbon, (2024, 10, 26), 6, 364, 356, 89, 151, 1100),
    ]
}

/// A generated deployment plus the window its statistics are taken over.
#[derive(Debug, Clone)]
pub struct SyntheticDeployment {
    pub data: CommunityData,
    pub window: TimeInterval,
}

fn local_midnight(tz: Tz, date: NaiveDate) -> DateTime<Utc> {
    tz.from_local_datetime(&date.and_time(NaiveTime::MIN))
        .earliest()
        .expect("midnight exists in fixture zones")
        .with_timezone(&Utc)
}

fn membership(person: &PersonId, community: &CommunityId, role: Role, at: DateTime<Utc>) -> Membership {
    Membership {
        person_id: person.clone(),
        community_id: community.clone(),
        role,
        program_overrides: BTreeMap::new(),
        joined_at: at,
        joined_via: if role == Role::Coordinator { JoinedVia::Founder } else { JoinedVia::Open },
    }
}

fn record(person: &PersonId, event: &EventId, path: &[RsvpState], at: DateTime<Utc>) -> ParticipationRecord {
    let history: Vec<StateChange> = path
        .iter()
        .enumerate()
        .map(|(i, s)| StateChange { state: *s, at: at + Duration::minutes(i as i64) })
        .collect();
    ParticipationRecord {
        person_id: person.clone(),
        event_id: event.clone(),
        state: *path.last().expect("non-empty path"),
        ticket_id: None,
        updated_at: history.last().map(|h| h.at).unwrap_or(at),
        state_history: history,
    }
}

/// Builds the event log for `row`.
///
/// Hosts are split into facilitators, who host the non-self-organized events,
/// and participants, who host the rest. Participation pair `j` links person
/// `j mod P` to event `(p + j div P) mod E`, which yields exactly `I`
/// distinct pairs covering all `P` people.
pub fn synthetic_deployment(row: &DeploymentRow) -> SyntheticDeployment {
    let tz = row.timezone;
    let cid = CommunityId(format!("fixture-{}", row.name.to_lowercase().replace(' ', "-")));
    let start_date = NaiveDate::from_ymd_opt(row.start.0, row.start.1, row.start.2).expect("valid fixture date");
    let start = local_midnight(tz, start_date);
    let end = local_midnight(tz, start_date + Duration::days(row.duration_days));
    let window = TimeInterval { start, end };
    let created = start - Duration::days(14);

    let e = row.events as usize;
    let s = row.self_organized as usize;
    let h = row.hosts as usize;
    let p = row.participants as usize;
    let facilitated = e - s;
    let fac_hosts = if facilitated == 0 { 0 } else { facilitated.min((h / 5).max(1)) };
    assert!(h > fac_hosts && s >= h - fac_hosts, "row {} cannot be laid out", row.name);
    assert!(row.instances as usize >= p && row.instances as usize <= p * e);

    let community = Community {
        id: cid.clone(),
        lineage_id: cid.clone(),
        name: row.name.to_string(),
        timezone: tz,
        boundary_policy: BoundaryPolicy::open(),
        settings: CommunitySettings::default(),
        created_at: created,
        forked_from: None,
        archive: Vec::new(),
    };
    let venues: Vec<Venue> = (0..8)
        .map(|i| Venue {
            id: VenueId(format!("v-{i}")),
            community_id: cid.clone(),
            name: format!("Room {i}"),
            description: String::new(),
            geo: None,
            capacity: None,
            amenities: BTreeSet::new(),
            availability_windows: Vec::new(),
            opening_hours: WeeklyHours::always_open(),
            restricted_to_programs: BTreeSet::new(),
            shareable: true,
        })
        .collect();

    let coordinator = PersonId::from("coordinator");
    let host_ids: Vec<PersonId> = (0..h).map(|i| PersonId(format!("h-{i}"))).collect();
    let part_ids: Vec<PersonId> = (0..p).map(|i| PersonId(format!("p-{i}"))).collect();
    let lurkers: Vec<PersonId> = (0..10).map(|i| PersonId(format!("s-{i}"))).collect();

    let mut persons = vec![Person {
        id: coordinator.clone(),
        display_name: "Coordinator".into(),
        profile: String::new(),
        credential_refs: Vec::new(),
    }];
    let mut memberships = vec![membership(&coordinator, &cid, Role::Coordinator, created)];
    for (group, label) in [(&host_ids, "Host"), (&part_ids, "Resident"), (&lurkers, "Visitor")] {
        for (i, id) in group.iter().enumerate() {
            persons.push(Person {
                id: id.clone(),
                display_name: format!("{label} {i}"),
                profile: String::new(),
                credential_refs: Vec::new(),
            });
            let role = if label == "Host" && i < fac_hosts { Role::Facilitator } else { Role::Participant };
            memberships.push(membership(id, &cid, role, created));
        }
    }

    let span_minutes = row.duration_days * 24 * 60 - 120;
    let mut events = Vec::with_capacity(e + 8);
    for i in 0..e {
        let offset = (i as i64 * span_minutes) / e as i64;
        let begin = start + Duration::minutes(offset);
        let (host, role) = if i < facilitated {
            (&host_ids[i % fac_hosts], Role::Facilitator)
        } else {
            let k = i - facilitated;
            (&host_ids[fac_hosts + k % (h - fac_hosts)], Role::Participant)
        };
        events.push(Event {
            id: EventId(format!("e-{i}")),
            community_id: cid.clone(),
            title: format!("Session {i}"),
            interval: TimeInterval { start: begin, end: begin + Duration::minutes(60) },
            location: Location::Venue(venues[i % venues.len()].id.clone()),
            host_id: host.clone(),
            co_hosts: BTreeSet::new(),
            speakers: Vec::new(),
            tags: [format!("track-{}", i % 6)].into(),
            program_id: None,
            visibility: Visibility::Public,
            rsvp_mode: RsvpMode::RsvpTracked,
            checkin_enabled: true,
            state: if i % 7 == 3 { EventState::Rescheduled } else { EventState::Published },
            revision: if i % 7 == 3 { 2 } else { 1 },
            created_at: begin - Duration::days(1),
            created_by_role_snapshot: role,
            history: Vec::new(),
        });
    }
    // noise: never counted
    let noise = [
        (EventState::Cancelled, start + Duration::hours(30)),
        (EventState::Cancelled, start + Duration::hours(50)),
        (EventState::Draft, start + Duration::hours(70)),
        (EventState::Published, start - Duration::hours(3)),
        (EventState::Published, end),
        (EventState::Published, end + Duration::days(2)),
    ];
    for (n, (state, begin)) in noise.into_iter().enumerate() {
        events.push(Event {
            id: EventId(format!("noise-{n}")),
            community_id: cid.clone(),
            title: format!("Unscheduled {n}"),
            interval: TimeInterval { start: begin, end: begin + Duration::minutes(45) },
            location: Location::Text("Lobby".into()),
            host_id: lurkers[n].clone(),
            co_hosts: BTreeSet::new(),
            speakers: Vec::new(),
            tags: BTreeSet::new(),
            program_id: None,
            visibility: Visibility::Public,
            rsvp_mode: RsvpMode::RsvpTracked,
            checkin_enabled: false,
            state,
            revision: 1,
            created_at: created,
            created_by_role_snapshot: Role::Participant,
            history: Vec::new(),
        });
    }

    let mut records = Vec::with_capacity(row.instances as usize + 40);
    for j in 0..row.instances as usize {
        let person = j % p;
        let ev = &events[(person + j / p) % e];
        let path: &[RsvpState] = if j % 3 == 0 {
            &[RsvpState::Starred, RsvpState::Going, RsvpState::CheckedIn]
        } else {
            &[RsvpState::Going]
        };
        records.push(record(&part_ids[person], &ev.id, path, ev.created_at + Duration::hours(1)));
    }
    for (n, lurker) in lurkers.iter().enumerate() {
        let ev = &events[n % e];
        records.push(record(lurker, &ev.id, &[RsvpState::Starred], ev.created_at));
        let noise_ev = &events[e + n % 6];
        records.push(record(lurker, &noise_ev.id, &[RsvpState::Going], noise_ev.created_at));
    }
    records.push(record(&lurkers[0], &events[e - 1].id, &[RsvpState::Going, RsvpState::None], start));

    SyntheticDeployment {
        data: CommunityData {
            community,
            programs: Vec::new(),
            venues,
            persons,
            memberships,
            events,
            participation_records: records,
            tickets: Vec::new(),
            badges: Vec::new(),
            invitations: Vec::new(),
        },
        window,
    }
}

fn instant(rng: &mut impl Rng, base: DateTime<Utc>) -> DateTime<Utc> {
    base + Duration::nanoseconds(rng.random_range(0..30 * 86_400_000_000_000i64))
}

const ZONES: [Tz; 5] = [
    chrono_tz::UTC,
    chrono_tz::Europe::Lisbon,
    chrono_tz::America::Los_Angeles,
    chrono_tz::Asia::Kolkata,
    chrono_tz::Australia::Lord_Howe,
];

/// An arbitrary, internally consistent community: every reference resolves,
/// every person holds a membership, and the first membership is a coordinator.
/// Always contains at least one event placed at a venue.
pub fn random_community(rng: &mut impl Rng) -> CommunityData {
    let base = Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap();
    let cid = CommunityId::random();
    let tz = *ZONES.choose(rng).unwrap();
    let mut settings = CommunitySettings::default();
    if rng.random_bool(0.3) {
        settings.max_event_duration = rng.random_range(30..600);
        settings.allowed_visibilities.remove(&Visibility::Unlisted);
    }
    let boundary_policy = match rng.random_range(0..4) {
        0 => BoundaryPolicy::open(),
        1 => BoundaryPolicy { mode: BoundaryMode::InvitationToken, granted_role_on_join: Role::Participant },
        2 => BoundaryPolicy {
            mode: BoundaryMode::PeerApproval { required_approvals: rng.random_range(1..4) },
            granted_role_on_join: Role::Member,
        },
        _ => BoundaryPolicy {
            mode: BoundaryMode::CredentialProof { verifier_id: "mock".into() },
            granted_role_on_join: Role::Participant,
        },
    };
    let community = Community {
        id: cid.clone(),
        lineage_id: CommunityId::random(),
        name: format!("Village \"{}\" ✦", rng.random_range(0..1000)),
        timezone: tz,
        boundary_policy,
        settings,
        created_at: instant(rng, base - Duration::days(40)),
        forked_from: None,
        archive: Vec::new(),
    };

    let programs: Vec<Program> = (0..rng.random_range(0..4))
        .map(|i| {
            let s = instant(rng, base);
            Program {
                id: ProgramId::random(),
                community_id: cid.clone(),
                title: format!("Track {i}"),
                interval: rng.random_bool(0.7).then(|| TimeInterval { start: s, end: s + Duration::days(5) }),
                description: "line one\nline two".into(),
            }
        })
        .collect();

    let venues: Vec<Venue> = (0..rng.random_range(1..6))
        .map(|i| {
            let mut hours = BTreeMap::new();
            if rng.random_bool(0.4) {
                let t = |h| NaiveTime::from_hms_opt(h, 0, 0).unwrap();
                hours.insert(Day::Mon, vec![HoursSpan::new(t(9), t(17)).unwrap()]);
                hours.insert(Day::Sat, vec![HoursSpan::new(t(20), t(0)).unwrap()]);
            }
            let d = base.date_naive() + Duration::days(rng.random_range(0..10));
            Venue {
                id: VenueId::random(),
                community_id: cid.clone(),
                name: format!("Space {i}"),
                description: String::new(),
                geo: rng
                    .random_bool(0.5)
                    .then(|| Geo { lat: rng.random_range(-89.0..89.0), lon: rng.random_range(-179.0..179.0) }),
                capacity: NonZeroU32::new(rng.random_range(0..50)),
                amenities: if rng.random_bool(0.5) { ["projector".to_string()].into() } else { BTreeSet::new() },
                availability_windows: if rng.random_bool(0.3) {
                    vec![DateRange { start: d, end: d + Duration::days(3) }]
                } else {
                    Vec::new()
                },
                opening_hours: WeeklyHours(hours),
                restricted_to_programs: programs
                    .iter()
                    .filter(|_| rng.random_bool(0.2))
                    .map(|p| p.id.clone())
                    .collect(),
                shareable: rng.random_bool(0.3),
            }
        })
        .collect();

    let n_people = rng.random_range(2..25);
    let persons: Vec<Person> = (0..n_people)
        .map(|i| Person {
            id: PersonId::random(),
            display_name: format!("Resident Zq{i}x"),
            profile: if i % 3 == 0 { "likes, commas; and \"quotes\"".into() } else { String::new() },
            credential_refs: if i % 4 == 0 {
                vec![CredentialDescriptor { scheme: "mock".into(), data: "dmFsaWQ".into() }]
            } else {
                Vec::new()
            },
        })
        .collect();
    let memberships: Vec<Membership> = persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let role = match i {
                0 => Role::Coordinator,
                1 => Role::Participant,
                _ => *Role::ALL.choose(rng).unwrap(),
            };
            let mut m = membership(&p.id, &cid, role, instant(rng, base - Duration::days(30)));
            if let Some(prog) = programs.first().filter(|_| rng.random_bool(0.2)) {
                m.program_overrides.insert(prog.id.clone(), Role::Facilitator);
            }
            m
        })
        .collect();

    let n_events = rng.random_range(1..30);
    let mut events = Vec::with_capacity(n_events);
    for i in 0..n_events {
        let start = instant(rng, base);
        let interval = TimeInterval { start, end: start + Duration::minutes(rng.random_range(15..300)) };
        let location = if i == 0 || rng.random_bool(0.8) {
            Location::Venue(venues.choose(rng).unwrap().id.clone())
        } else {
            Location::Text("The big tree, north lawn".into())
        };
        let host = persons.choose(rng).unwrap().id.clone();
        let state = *[EventState::Published, EventState::Published, EventState::Rescheduled, EventState::Cancelled, EventState::Draft]
            .choose(rng)
            .unwrap();
        let created_at = start - Duration::days(2);
        let mut history = vec![HistoryEntry { revision: 1, at: created_at, actor: host.clone(), change: EventChange::Created }];
        if state == EventState::Rescheduled {
            history.push(HistoryEntry {
                revision: 2,
                at: created_at + Duration::hours(1),
                actor: host.clone(),
                change: EventChange::Rescheduled {
                    from_interval: TimeInterval { start: start - Duration::hours(3), end: start - Duration::hours(2) },
                    from_location: Location::Venue(venues.choose(rng).unwrap().id.clone()),
                },
            });
        }
        events.push(Event {
            id: EventId::random(),
            community_id: cid.clone(),
            title: format!("Session {i}: ideas, plans; more"),
            interval,
            location,
            host_id: host,
            co_hosts: persons.iter().filter(|_| rng.random_bool(0.1)).map(|p| p.id.clone()).collect(),
            speakers: if rng.random_bool(0.3) { vec![format!("Speaker Kq{i}")] } else { Vec::new() },
            tags: ["ai", "bio", "art", "food"].iter().filter(|_| rng.random_bool(0.3)).map(|t| t.to_string()).collect(),
            program_id: programs.choose(rng).filter(|_| rng.random_bool(0.5)).map(|p| p.id.clone()),
            visibility: *Visibility::ALL.choose(rng).unwrap(),
            rsvp_mode: *[RsvpMode::OpenDropIn, RsvpMode::RsvpTracked, RsvpMode::Ticketed].choose(rng).unwrap(),
            checkin_enabled: rng.random_bool(0.6),
            revision: history.len() as u64,
            state,
            created_at,
            created_by_role_snapshot: *Role::ALL.choose(rng).unwrap(),
            history,
        });
    }

    let mut tickets = Vec::new();
    for e in events.iter().filter(|e| e.rsvp_mode == RsvpMode::Ticketed) {
        tickets.push(Ticket {
            id: TicketId::random(),
            event_id: e.id.clone(),
            price: Price { amount: Decimal::new(rng.random_range(0..10_000), 2), currency: "USD".into() },
            required_badge: rng.random_bool(0.3).then(|| "resident".to_string()),
            quantity: NonZeroU32::new(rng.random_range(0..30)),
            claimed: 0,
        });
    }

    let mut records = Vec::new();
    for e in &events {
        for p in &persons {
            if !rng.random_bool(0.25) {
                continue;
            }
            let path: &[RsvpState] = match rng.random_range(0..4) {
                0 => &[RsvpState::Starred],
                1 => &[RsvpState::Going],
                2 => &[RsvpState::Going, RsvpState::CheckedIn],
                _ => &[RsvpState::Starred, RsvpState::None],
            };
            let mut r = record(&p.id, &e.id, path, instant(rng, base - Duration::days(5)));
            if let Some(t) = tickets.iter_mut().find(|t| t.event_id == e.id) {
                if r.state.is_attending() && t.remaining().is_none_or(|n| n > 0) {
                    t.claimed += 1;
                    r.ticket_id = Some(t.id.clone());
                }
            }
            records.push(r);
        }
    }

    let mut badges = Vec::new();
    for p in &persons {
        if rng.random_bool(0.3) {
            badges.push(Badge {
                id: BadgeId::random(),
                community_id: cid.clone(),
                name: "resident".into(),
                issued_to: p.id.clone(),
                issued_for: events.choose(rng).filter(|_| rng.random_bool(0.5)).map(|e| e.id.clone()),
                issued_at: instant(rng, base),
            });
        }
    }

    let invitations: Vec<Invitation> = (0..rng.random_range(0..3))
        .map(|_| Invitation::issue(cid.clone(), persons[0].id.clone(), Some(5), Some(base + Duration::days(60))).0)
        .collect();

    CommunityData {
        community,
        programs,
        venues,
        persons,
        memberships,
        events,
        participation_records: records,
        tickets,
        badges,
        invitations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{compute_deployment_stats, StatsOptions};

    #[test]
    fn every_row_reproduces() {
        for row in deployment_rows() {
            let d = synthetic_deployment(&row);
            let got = compute_deployment_stats(
                &d.data.events,
                &d.data.participation_records,
                &d.window,
                row.timezone,
                StatsOptions::default(),
            );
            assert_eq!(got, row.expected(), "{}", row.name);
        }
    }

    #[test]
    fn totals_give_reference_ratio() {
        let rows = deployment_rows();
        let events: u64 = rows.iter().map(|r| r.events).sum();
        let selforg: u64 = rows.iter().map(|r| r.self_organized).sum();
        assert_eq!((events, selforg), (1586, 1106));
    }
}
