//! iCalendar (RFC 5545) feed output.
//!
//! The feed is a pure function of its inputs: lines end in CRLF, are folded
//! at 75 octets, and every instant is written in UTC (`...Z`), so no
//! VTIMEZONE component is needed.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};

use crate::model::{Community, Event, EventState, Location, Venue, VenueId};

pub const PRODID: &str = "-//sola//coordination feed//EN";

const MAX_LINE_OCTETS: usize = 75;

/// Escapes a TEXT value: backslash, semicolon, comma and newlines.
pub fn escape_text(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push_str("\\\\"),
            ';' => out.push_str("\\;"),
            ',' => out.push_str("\\,"),
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push_str("\\n");
            }
            '\n' => out.push_str("\\n"),
            c if c.is_control() => {}
            c => out.push(c),
        }
    }
    out
}

/// Folds one content line into CRLF-terminated physical lines of at most 75
/// octets, never splitting a UTF-8 sequence.
pub fn fold_line(line: &str, out: &mut String) {
    let mut budget = MAX_LINE_OCTETS;
    let mut used = 0;
    for c in line.chars() {
        let len = c.len_utf8();
        if used + len > budget {
            out.push_str("\r\n ");
            // the leading space counts toward the next line's octets
            budget = MAX_LINE_OCTETS - 1;
            used = 0;
        }
        out.push(c);
        used += len;
    }
    out.push_str("\r\n");
}

pub fn format_utc(at: DateTime<Utc>) -> String {
    at.format("%Y%m%dT%H%M%SZ").to_string()
}

fn status(state: EventState) -> &'static str {
    match state {
        EventState::Draft => "TENTATIVE",
        EventState::Published | EventState::Rescheduled => "CONFIRMED",
        EventState::Cancelled => "CANCELLED",
    }
}

/// Renders a VCALENDAR with one VEVENT per non-draft event, ordered by start
/// then id. Cancelled events stay in the feed with `STATUS:CANCELLED` so
/// subscribed calendars drop them.
pub fn render_calendar<'a>(
    community: &Community,
    events: impl IntoIterator<Item = &'a Event>,
    venues: impl IntoIterator<Item = &'a Venue>,
) -> String {
    let venues: HashMap<&VenueId, &Venue> = venues.into_iter().map(|v| (&v.id, v)).collect();
    let mut events: Vec<&Event> = events.into_iter().filter(|e| e.state != EventState::Draft).collect();
    events.sort_by(|a, b| a.interval.start.cmp(&b.interval.start).then_with(|| a.id.cmp(&b.id)));

    let mut out = String::new();
    let mut line = |s: &str| fold_line(s, &mut out);
    line("BEGIN:VCALENDAR");
    line("VERSION:2.0");
    line(&format!("PRODID:{PRODID}"));
    line("CALSCALE:GREGORIAN");
    line("METHOD:PUBLISH");
    line(&format!("X-WR-CALNAME:{}", escape_text(&community.name)));
    line(&format!("X-WR-TIMEZONE:{}", community.timezone.name()));
    for e in events {
        let stamp = e.history.last().map(|h| h.at).unwrap_or(e.created_at);
        line("BEGIN:VEVENT");
        line(&format!("UID:{}", e.id));
        line(&format!("DTSTAMP:{}", format_utc(stamp)));
        line(&format!("DTSTART:{}", format_utc(e.interval.start)));
        line(&format!("DTEND:{}", format_utc(e.interval.end)));
        line(&format!("SUMMARY:{}", escape_text(&e.title)));
        let location = match &e.location {
            Location::Venue(id) => venues.get(id).map(|v| v.name.clone()).unwrap_or_else(|| id.to_string()),
            Location::Text(text) => text.clone(),
        };
        if !location.is_empty() {
            line(&format!("LOCATION:{}", escape_text(&location)));
        }
        if !e.tags.is_empty() {
            let cats: Vec<String> = e.tags.iter().map(|t| escape_text(t)).collect();
            line(&format!("CATEGORIES:{}", cats.join(",")));
        }
        line(&format!("STATUS:{}", status(e.state)));
        line(&format!("SEQUENCE:{}", e.revision.saturating_sub(1)));
        let mut desc = String::new();
        if !e.speakers.is_empty() {
            let _ = write!(desc, "Speakers: {}", e.speakers.join(", "));
        }
        if !desc.is_empty() {
            line(&format!("DESCRIPTION:{}", escape_text(&desc)));
        }
        line("END:VEVENT");
    }
    line("END:VCALENDAR");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;

    #[test]
    fn escaping() {
        assert_eq!(escape_text("a,b;c\\d\ne\r\nf"), "a\\,b\\;c\\\\d\\ne\\nf");
    }

    #[test]
    fn folding_respects_octets_and_char_boundaries() {
        let long = format!("SUMMARY:{}", "ü".repeat(100));
        let mut out = String::new();
        fold_line(&long, &mut out);
        for (i, phys) in out.split("\r\n").filter(|l| !l.is_empty()).enumerate() {
            assert!(phys.len() <= 75, "line {i} has {} octets", phys.len());
            if i > 0 {
                assert!(phys.starts_with(' '));
            }
        }
        let unfolded = out.trim_end_matches("\r\n").replace("\r\n ", "");
        assert_eq!(unfolded, long);
    }

    #[test]
    fn calendar_shape() {
        let c = community(chrono_tz::Asia::Bangkok);
        let mut e = event("evt-1", utc(2024, 6, 1, 10, 0), utc(2024, 6, 1, 11, 30), "v1");
        e.title = "Talk, with; punctuation".into();
        e.tags = ["ai".to_string(), "bio".to_string()].into();
        let mut draft = event("evt-2", utc(2024, 6, 1, 12, 0), utc(2024, 6, 1, 13, 0), "v1");
        draft.state = EventState::Draft;
        let v = venue("v1");
        let text = render_calendar(&c, [&e, &draft], [&v]);
        assert!(text.starts_with("BEGIN:VCALENDAR\r\nVERSION:2.0\r\n"));
        assert!(text.ends_with("END:VCALENDAR\r\n"));
        assert!(text.contains("UID:evt-1\r\n"));
        assert!(!text.contains("evt-2"));
        assert!(text.contains("DTSTART:20240601T100000Z\r\n"));
        assert!(text.contains("DTEND:20240601T113000Z\r\n"));
        assert!(text.contains("SUMMARY:Talk\\, with\\; punctuation\r\n"));
        assert!(text.contains("CATEGORIES:ai,bio\r\n"));
        assert!(!text.replace("\r\n", "").contains('\n'));
    }
}
