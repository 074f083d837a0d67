//! Bilibili-style danmaku XML:
//! `<d p="time,mode,fontsize,color,timestamp,pool,sender,rowid">text</d>`.

use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{CorpusError, LiveComment};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DanmakuReport {
    pub comments: Vec<LiveComment>,
    /// `<d>` elements dropped for a malformed `p` attribute or empty body.
    pub skipped: usize,
}

fn parse_p(p: &str) -> Option<(f64, i32, u32, String)> {
    let fields: Vec<&str> = p.split(',').collect();
    if fields.len() < 8 {
        return None;
    }
    let time: f64 = fields[0].trim().parse().ok()?;
    if !time.is_finite() || time < 0.0 {
        return None;
    }
    let mode: i32 = fields[1].trim().parse().ok()?;
    let color: u32 = fields[3].trim().parse().ok()?;
    if color > 0xFF_FFFF {
        return None;
    }
    Some((time, mode, color, fields[6].to_string()))
}

fn p_attribute(e: &BytesStart<'_>) -> Result<Option<String>, CorpusError> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| CorpusError::NotXml(err.to_string()))?;
        if attr.key.as_ref() == "p" {
            let value = attr.normalized_value(quick_xml::XmlVersion::Implicit1_0).map_err(|err| CorpusError::NotXml(err.to_string()))?;
            return Ok(Some(value.into_owned()));
        }
    }
    Ok(None)
}

/// Parses every `<d>` element, sorted by time (stable on ties).
pub fn parse_danmaku_xml(bytes: &[u8]) -> Result<DanmakuReport, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::NotXml(e.to_string()))?;
    let mut reader = Reader::from_str(text);
    let mut report = DanmakuReport::default();
    let mut depth = 0usize;
    let mut saw_element = false;
    // (p attribute, body) of the `<d>` currently open
    let mut open: Option<(Option<String>, String)> = None;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| CorpusError::NotXml(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(e) => {
                depth += 1;
                saw_element = true;
                if e.name().as_ref() == "d" {
                    open = Some((p_attribute(&e)?, String::new()));
                }
            }
            Event::Empty(e) => {
                saw_element = true;
                if e.name().as_ref() == "d" {
                    report.skipped += 1;
                }
            }
            Event::Text(t) => {
                if let Some((_, body)) = open.as_mut() {
                    body.push_str(&t.xml10_content());
                }
            }
            Event::CData(t) => {
                if let Some((_, body)) = open.as_mut() {
                    body.push_str(&t.xml10_content());
                }
            }
            Event::GeneralRef(r) => {
                if let Some((_, body)) = open.as_mut() {
                    if let Some(c) = r.resolve_char_ref().map_err(|e| CorpusError::NotXml(e.to_string()))? {
                        body.push(c);
                    } else {
                        let name = r.xml10_content();
                        let resolved = quick_xml::escape::unescape(&format!("&{name};"))
                            .map_err(|e| CorpusError::NotXml(e.to_string()))?
                            .into_owned();
                        body.push_str(&resolved);
                    }
                }
            }
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if e.name().as_ref() == "d" {
                    if let Some((p, body)) = open.take() {
                        match p.as_deref().and_then(parse_p) {
                            Some((time_s, mode, color, sender)) if !body.is_empty() => {
                                report.comments.push(LiveComment { time_s, text: body, mode, color, sender });
                            }
                            _ => report.skipped += 1,
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_element || depth != 0 {
        return Err(CorpusError::NotXml("no complete root element".into()));
    }
    report.comments.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    Ok(report)
}

/// Serializes comments in the same layout [`parse_danmaku_xml`] reads.
pub fn write_danmaku_xml(comments: &[LiveComment]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<i>\n");
    for (row, c) in comments.iter().enumerate() {
        let p = format!("{},{},25,{},0,0,{},{}", c.time_s, c.mode, c.color, c.sender, row);
        let _ = writeln!(
            out,
            "  <d p=\"{}\">{}</d>",
            quick_xml::escape::escape(p.as_str()),
            quick_xml::escape::escape(c.text.as_str())
        );
    }
    out.push_str("</i>\n");
    out
}
