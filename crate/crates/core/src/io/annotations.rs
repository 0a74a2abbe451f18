//! Beat annotation text files: one event per line, `<time>` or `<time>\t<position>`.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_file, write_atomic};
use crate::beats::BeatSequence;
use crate::error::{Error, Result};

pub fn parse_annotations(text: &str, source: &str) -> Result<BeatSequence> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let mut with_positions = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() > 2 {
            return Err(err(line_no, format!("expected 1 or 2 fields, found {}", fields.len())));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("bad time {:?}", fields[0])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(err(line_no, format!("time {time} out of range")));
        }
        let has_pos = fields.len() == 2;
        if *with_positions.get_or_insert(has_pos) != has_pos {
            return Err(err(line_no, "metrical positions given on some lines only".into()));
        }
        if has_pos {
            let pos: u32 = fields[1]
                .parse()
                .ok()
                .filter(|&p| p >= 1)
                .ok_or_else(|| err(line_no, format!("bad metrical position {:?}", fields[1])))?;
            positions.push(pos);
        }
        if let Some(&prev) = times.last() {
            if time <= prev {
                return Err(err(line_no, format!("time {time} does not follow {prev}")));
            }
        }
        times.push(time);
    }
    if with_positions == Some(true) {
        BeatSequence::with_positions(times, positions)
    } else {
        BeatSequence::new(times)
    }
}

pub fn read_annotations(path: &Path) -> Result<BeatSequence> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: "file is not UTF-8".into(),
    })?;
    parse_annotations(&text, &path.display().to_string())
}

/// One line per event with `decimals` fractional digits, followed by the position if known.
pub fn format_beats(beats: &BeatSequence, decimals: usize) -> String {
    let mut out = String::new();
    for (i, t) in beats.times().iter().enumerate() {
        match beats.positions() {
            Some(p) => writeln!(out, "{t:.decimals$}\t{}", p[i]),
            None => writeln!(out, "{t:.decimals$}"),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// Tracker output format: millisecond resolution.
pub fn write_beats(path: &Path, beats: &BeatSequence) -> Result<()> {
    write_atomic(path, format_beats(beats, 3).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_positions() {
        let s = parse_annotations("0.500\t1\n1.000\t2\n", "t").unwrap();
        assert_eq!(s.times(), &[0.5, 1.0]);
        assert_eq!(s.positions().unwrap(), &[1, 2]);
    }

    #[test]
    fn beat_only_and_comments() {
        let s = parse_annotations("# header\n\n0.5\n  1.0  \n", "t").unwrap();
        assert_eq!(s.times(), &[0.5, 1.0]);
        assert!(s.positions().is_none());
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_annotations("1.0\n0.5\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_annotations("0.5\tx\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_annotations("0.5\t1\n1.0\n", "t"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_annotations("abc\n", "t"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn format_round_trip() {
        let s = BeatSequence::with_positions(vec![0.5, 1.25, 2.0], vec![3, 1, 2]).unwrap();
        let text = format_beats(&s, 3);
        assert_eq!(text, "0.500\t3\n1.250\t1\n2.000\t2\n");
        assert_eq!(parse_annotations(&text, "t").unwrap(), s);
    }
}
