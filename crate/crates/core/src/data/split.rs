use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::error::{Error, Result};

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// One period per calendar day (UTC) that contains data.
    CalendarDay,
    /// `n` periods of equal size; the first `len % n` periods take one extra.
    EqualCount(usize),
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitScheme::CalendarDay => write!(f, "calendar_day"),
            SplitScheme::EqualCount(n) => write!(f, "equal_count:{n}"),
        }
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "calendar_day" {
            return Ok(SplitScheme::CalendarDay);
        }
        if let Some(n) = s.strip_prefix("equal_count:") {
            let n: i64 = n
                .parse()
                .map_err(|_| Error::Config(format!("bad period count in {s:?}")))?;
            if n <= 0 {
                return Err(Error::Config(format!(
                    "period count must be positive, got {n}"
                )));
            }
            return Ok(SplitScheme::EqualCount(n as usize));
        }
        Err(Error::Config(format!(
            "unknown split scheme {s:?} (expected calendar_day or equal_count:<n>)"
        )))
    }
}

/// Contiguous, time-ordered slice of the stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSlice {
    /// 1-based period index.
    pub index: usize,
    /// Inclusive lower and upper timestamp bounds.
    pub start: i64,
    pub end: i64,
    pub interactions: Vec<Interaction>,
}

/// Splits interactions into disjoint, time-ordered periods that cover the
/// whole input. Equal timestamps keep input order.
pub fn split_periods(
    interactions: &[Interaction],
    scheme: SplitScheme,
) -> Result<Vec<PeriodSlice>> {
    if interactions.is_empty() {
        return Err(Error::Data("cannot split an empty interaction list".into()));
    }
    let mut sorted: Vec<&Interaction> = interactions.iter().collect();
    sorted.sort_by_key(|x| x.timestamp);

    let chunks: Vec<(i64, i64, Vec<&Interaction>)> = match scheme {
        SplitScheme::CalendarDay => {
            let mut out: Vec<(i64, i64, Vec<&Interaction>)> = Vec::new();
            for x in sorted {
                let day = x.timestamp.div_euclid(SECONDS_PER_DAY);
                match out.last_mut() {
                    Some((d, _, items)) if *d == day => items.push(x),
                    _ => out.push((day, 0, vec![x])),
                }
            }
            out.into_iter()
                .map(|(day, _, items)| {
                    (
                        day * SECONDS_PER_DAY,
                        (day + 1) * SECONDS_PER_DAY - 1,
                        items,
                    )
                })
                .collect()
        }
        SplitScheme::EqualCount(n) => {
            if n == 0 {
                return Err(Error::Invalid("n_periods must be positive".into()));
            }
            if n > sorted.len() {
                return Err(Error::Invalid(format!(
                    "cannot split {} interactions into {n} periods",
                    sorted.len()
                )));
            }
            let base = sorted.len() / n;
            let extra = sorted.len() % n;
            let mut out = Vec::with_capacity(n);
            let mut pos = 0;
            for p in 0..n {
                let size = base + usize::from(p < extra);
                let items = sorted[pos..pos + size].to_vec();
                pos += size;
                out.push((items[0].timestamp, items[size - 1].timestamp, items));
            }
            out
        }
    };

    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, (start, end, items))| PeriodSlice {
            index: i + 1,
            start,
            end,
            interactions: items.into_iter().cloned().collect(),
        })
        .collect())
}
