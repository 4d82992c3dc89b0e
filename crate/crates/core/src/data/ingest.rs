use std::io::Read;
use std::path::Path;

use super::Interaction;
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["user_id", "item_id", "label", "timestamp"];

/// Parses a delimited interaction log with a required header row:
/// `user_id, item_id, label, timestamp`, then any number of `name=value`
/// categorical columns.
pub fn parse_interactions<R: Read>(reader: R, delimiter: u8) -> Result<Vec<Interaction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(Error::Data("empty input: expected a header row".into())),
    };
    let got: Vec<&str> = header.iter().take(4).map(str::trim).collect();
    if got != HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header starting with {:?}, found {:?}",
                HEADER, got
            ),
        });
    }

    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() < 4 {
            return Err(parse_err(
                line,
                format!("expected at least 4 columns, found {}", rec.len()),
            ));
        }
        let label = match rec[2].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    line,
                    format!("label must be 0 or 1, found {other:?}"),
                ))
            }
        };
        let timestamp: i64 = rec[3].trim().parse().map_err(|_| {
            parse_err(
                line,
                format!("timestamp must be an integer, found {:?}", &rec[3]),
            )
        })?;
        let user_id = rec[0].trim();
        let item_id = rec[1].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err(line, "empty user_id or item_id".into()));
        }
        let mut interaction = Interaction::new(user_id, item_id, label, timestamp);
        for field in rec.iter().skip(4) {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let (name, value) = field.split_once('=').ok_or_else(|| {
                parse_err(
                    line,
                    format!("side feature must be name=value, found {field:?}"),
                )
            })?;
            if name.is_empty() {
                return Err(parse_err(
                    line,
                    format!("side feature with empty name: {field:?}"),
                ));
            }
            interaction
                .side_features
                .insert(name.to_string(), value.to_string());
        }
        out.push(interaction);
    }
    if out.is_empty() {
        return Err(Error::Data("input has a header but no interactions".into()));
    }
    Ok(out)
}

pub fn read_interactions(path: &Path, delimiter: u8) -> Result<Vec<Interaction>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_interactions(std::io::BufReader::new(file), delimiter)
}

fn parse_err(line: u64, msg: String) -> Error {
    Error::Parse { line, msg }
}
