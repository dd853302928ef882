//! Map extract parsing: the XML interchange format with `node`, `way`,
//! `tag` and `nd` elements.

use std::collections::HashMap;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct RawNode {
    pub lat: f64,
    pub lon: f64,
    pub tags: HashMap<String, String>,
}

#[derive(Debug, Clone)]
pub(crate) struct RawWay {
    pub id: i64,
    pub node_refs: Vec<i64>,
    pub tags: HashMap<String, String>,
}

#[derive(Debug, Default)]
pub(crate) struct RawExtract {
    pub nodes: HashMap<i64, RawNode>,
    /// Ways in file order; parsing must be idempotent.
    pub ways: Vec<RawWay>,
}

/// Parses the XML text of a map extract.
///
/// Unknown elements are skipped; malformed XML or missing mandatory
/// attributes fail with a line-numbered parse error.
pub(crate) fn parse_extract(xml: &str) -> Result<RawExtract> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);

    let mut extract = RawExtract::default();
    let mut current_node: Option<(i64, RawNode)> = None;
    let mut current_way: Option<RawWay> = None;

    loop {
        let event = reader.read_event().map_err(|e| Error::Parse {
            line: line_of(xml, reader.buffer_position() as usize),
            message: e.to_string(),
        })?;
        // end position of the event just read keeps line attribution on
        // the element itself
        let pos = reader.buffer_position() as usize;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) => {
                let self_closing = matches!(event, Event::Empty(_));
                match e.name().as_ref() {
                    b"node" => {
                        let id = parse_num::<i64>(&attr(e, "id", xml, pos)?, "id", xml, pos)?;
                        let lat = parse_num::<f64>(&attr(e, "lat", xml, pos)?, "lat", xml, pos)?;
                        let lon = parse_num::<f64>(&attr(e, "lon", xml, pos)?, "lon", xml, pos)?;
                        let node = RawNode {
                            lat,
                            lon,
                            tags: HashMap::new(),
                        };
                        if self_closing {
                            extract.nodes.insert(id, node);
                        } else {
                            current_node = Some((id, node));
                        }
                    }
                    b"way" => {
                        let id = parse_num::<i64>(&attr(e, "id", xml, pos)?, "id", xml, pos)?;
                        let way = RawWay {
                            id,
                            node_refs: Vec::new(),
                            tags: HashMap::new(),
                        };
                        if self_closing {
                            extract.ways.push(way);
                        } else {
                            current_way = Some(way);
                        }
                    }
                    b"tag" => {
                        let k = attr(e, "k", xml, pos)?;
                        let v = attr(e, "v", xml, pos)?;
                        if let Some((_, node)) = current_node.as_mut() {
                            node.tags.insert(k, v);
                        } else if let Some(way) = current_way.as_mut() {
                            way.tags.insert(k, v);
                        }
                    }
                    b"nd" => {
                        let r = parse_num::<i64>(&attr(e, "ref", xml, pos)?, "ref", xml, pos)?;
                        if let Some(way) = current_way.as_mut() {
                            way.node_refs.push(r);
                        }
                    }
                    _ => {}
                }
            }
            Event::End(ref e) => match e.name().as_ref() {
                b"node" => {
                    if let Some((id, node)) = current_node.take() {
                        extract.nodes.insert(id, node);
                    }
                }
                b"way" => {
                    if let Some(way) = current_way.take() {
                        extract.ways.push(way);
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    Ok(extract)
}

fn line_of(xml: &str, byte_pos: usize) -> usize {
    let upto = byte_pos.min(xml.len());
    xml.as_bytes()[..upto].iter().filter(|&&b| b == b'\n').count() + 1
}

fn attr(e: &BytesStart, name: &str, xml: &str, pos: usize) -> Result<String> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Parse {
            line: line_of(xml, pos),
            message: err.to_string(),
        })?;
        if a.key.as_ref() == name.as_bytes() {
            return Ok(a
                .unescape_value()
                .map_err(|err| Error::Parse {
                    line: line_of(xml, pos),
                    message: err.to_string(),
                })?
                .into_owned());
        }
    }
    Err(Error::Parse {
        line: line_of(xml, pos),
        message: format!("missing attribute `{name}` on <{}>", String::from_utf8_lossy(e.name().as_ref())),
    })
}

fn parse_num<T: std::str::FromStr>(raw: &str, name: &str, xml: &str, pos: usize) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::Parse {
        line: line_of(xml, pos),
        message: format!("invalid value `{raw}` for attribute `{name}`"),
    })
}
