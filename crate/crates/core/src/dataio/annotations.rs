//! MOT-style `frame,id,x,y,w,h` annotation files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::geometry::{BoundingBox, Track};
use crate::error::{invalid, io_err, Error, Result};

pub fn load_annotations(path: &Path) -> Result<Vec<Track>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text, path)
}

/// Parses annotation text; `origin` only labels errors.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<Track>> {
    let mut tracks: BTreeMap<i64, Track> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(parse_err(format!(
                "expected at least 6 comma-separated fields, found {}",
                fields.len()
            )));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad frame number `{}`", fields[0])))?;
        let id: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad object id `{}`", fields[1])))?;
        let mut nums = [0.0f64; 4];
        for (k, name) in ["x", "y", "w", "h"].iter().enumerate() {
            nums[k] = fields[2 + k]
                .parse()
                .map_err(|_| parse_err(format!("bad {} `{}`", name, fields[2 + k])))?;
        }
        let bbox = BoundingBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| invalid(format!("{}:{}: {}", origin.display(), line_no, e)))?;
        let track = tracks.entry(id).or_insert_with(|| Track::new(id));
        if track.boxes.insert(frame, bbox).is_some() {
            return Err(invalid(format!(
                "{}:{}: second box for object {} in frame {}",
                origin.display(),
                line_no,
                id,
                frame
            )));
        }
    }
    Ok(tracks.into_values().collect())
}

/// Renders tracks as annotation text, ordered by frame then id.
pub fn format_annotations(tracks: &[Track]) -> String {
    let mut rows: Vec<(usize, i64, &BoundingBox)> = tracks
        .iter()
        .flat_map(|t| t.boxes.iter().map(move |(&f, b)| (f, t.object_id, b)))
        .collect();
    rows.sort_by_key(|&(f, id, _)| (f, id));
    let mut out = String::new();
    for (f, id, b) in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", f, id, b.x, b.y, b.w, b.h);
    }
    out
}

pub fn save_annotations(tracks: &[Track], path: &Path) -> Result<()> {
    fs::write(path, format_annotations(tracks)).map_err(io_err(path))
}
