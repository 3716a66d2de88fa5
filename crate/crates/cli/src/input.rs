//! Plain-text interaction files: one user per line, whitespace-separated
//! positive item indices. Lines that are blank or start with `#` are skipped.

use std::path::Path;

use splitrec_core::split::{InteractionVector, ItemId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: cannot parse {token:?} as an item index")]
    Parse {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("line {line}, column {column}: item index 0 is not allowed (indices start at 1)")]
    ZeroIndex { line: usize, column: usize },
    #[error("line {line}: item {item} appears twice")]
    Duplicate { line: usize, item: ItemId },
    #[error("no users in input")]
    Empty,
    #[error("{} user(s) exceed n_max = {n_max}: lines {}", lines.len(), join(lines))]
    TooManyItems { n_max: usize, lines: Vec<usize> },
    #[error("line {line}: item {item} exceeds n_item = {n_item}")]
    OutOfRange { line: usize, item: ItemId, n_item: u32 },
}

fn join(lines: &[usize]) -> String {
    lines
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInteractions {
    pub users: Vec<InteractionVector>,
    pub n_item: u32,
}

/// Reads and validates an interaction file.
///
/// `n_item` defaults to the largest index seen; an override must cover it.
pub fn load_interactions(
    path: &Path,
    n_max: usize,
    n_item: Option<u32>,
) -> Result<LoadedInteractions, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_interactions(&text, n_max, n_item)
}

pub fn parse_interactions(
    text: &str,
    n_max: usize,
    n_item: Option<u32>,
) -> Result<LoadedInteractions, InputError> {
    let mut rows: Vec<(usize, Vec<ItemId>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut items = Vec::new();
        for (column, token) in tokens(raw) {
            let item: ItemId = token.parse().map_err(|_| InputError::Parse {
                line,
                column,
                token: token.to_owned(),
            })?;
            if item == 0 {
                return Err(InputError::ZeroIndex { line, column });
            }
            items.push(item);
        }
        rows.push((line, items));
    }
    if rows.is_empty() {
        return Err(InputError::Empty);
    }

    let long: Vec<usize> = rows
        .iter()
        .filter(|(_, items)| items.len() > n_max)
        .map(|(line, _)| *line)
        .collect();
    if !long.is_empty() {
        return Err(InputError::TooManyItems { n_max, lines: long });
    }

    let seen = rows
        .iter()
        .flat_map(|(_, items)| items.iter().copied())
        .max()
        .unwrap_or(1);
    let n_item = n_item.unwrap_or(seen);
    let mut users = Vec::with_capacity(rows.len());
    for (line, items) in rows {
        if let Some(&item) = items.iter().find(|&&i| i > n_item) {
            return Err(InputError::OutOfRange { line, item, n_item });
        }
        let mut sorted = items.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(InputError::Duplicate { line, item: w[0] });
        }
        users.push(InteractionVector::new(items).expect("non-empty, distinct, positive"));
    }
    Ok(LoadedInteractions { users, n_item })
}

// Whitespace-separated tokens with their 1-based character column.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((col + 1, byte)),
            (true, Some((c, b))) => {
                out.push((c, &line[b..byte]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some((c, b)) = start {
        out.push((c, &line[b..]));
    }
    out.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_users_and_max_index() {
        let loaded = parse_interactions("3 7\n1 2 5\n", 10, None).unwrap();
        assert_eq!(loaded.users.len(), 2);
        assert_eq!(loaded.n_item, 7);
        assert_eq!(loaded.users[0].items(), &[3, 7]);
        assert_eq!(loaded.users[1].items(), &[1, 2, 5]);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let loaded = parse_interactions("# header\n\n  4\t9 \n", 10, Some(20)).unwrap();
        assert_eq!(loaded.users.len(), 1);
        assert_eq!(loaded.n_item, 20);
    }

    #[test]
    fn zero_index_cites_line_and_column() {
        let err = parse_interactions("1 2\n3  0 4\n", 10, None).unwrap_err();
        assert!(matches!(err, InputError::ZeroIndex { line: 2, column: 4 }));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn bad_token_cites_position() {
        let err = parse_interactions("1 x2\n", 10, None).unwrap_err();
        match err {
            InputError::Parse {
                line, column, token,
            } => assert_eq!((line, column, token.as_str()), (1, 3, "x2")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_interactions("-3\n", 10, None),
            Err(InputError::Parse { .. })
        ));
    }

    #[test]
    fn long_users_are_listed() {
        let err = parse_interactions("1 2 3\n4\n5 6 7 8\n", 2, None).unwrap_err();
        match &err {
            InputError::TooManyItems { lines, .. } => assert_eq!(lines, &[1, 3]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("lines 1, 3"));
    }

    #[test]
    fn empty_and_invalid_inputs() {
        assert!(matches!(
            parse_interactions("# only a comment\n", 5, None),
            Err(InputError::Empty)
        ));
        assert!(matches!(
            parse_interactions("2 2\n", 5, None),
            Err(InputError::Duplicate { line: 1, item: 2 })
        ));
        assert!(matches!(
            parse_interactions("9\n", 5, Some(8)),
            Err(InputError::OutOfRange { item: 9, .. })
        ));
    }
}
