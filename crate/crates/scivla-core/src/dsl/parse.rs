//! Line-oriented parser for the transitional-action language. One command
//! per line, `#` starts a comment, keywords are case-insensitive, numbers
//! are decimal. Errors carry line and column.

use thiserror::Error;

use super::{Axis, Command, TransitionProgram};
use crate::sim::JointConfiguration;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> ParseError {
        ParseError { line, column, message: message.into() }
    }
}

struct Cursor<'a> {
    text: &'a str,
    line: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Cursor<'a> {
        Cursor { text, line, pos: 0 }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.rest().chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(self.line, self.column(), message)
    }

    fn ident(&mut self) -> Result<(usize, String), ParseError> {
        self.skip_ws();
        let start = self.column();
        let word: String = self
            .rest()
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        if word.is_empty() {
            return Err(self.error("expected an identifier"));
        }
        self.pos += word.len();
        Ok((start, word.to_ascii_lowercase()))
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    /// A `key=value` pair; the value is a bare token or a `[...]` list.
    fn argument(&mut self) -> Result<(usize, String, String), ParseError> {
        let (col, key) = self.ident()?;
        self.skip_ws();
        self.expect('=')?;
        self.skip_ws();
        if self.rest().starts_with('[') {
            let Some(end) = self.rest().find(']') else {
                return Err(self.error("unterminated `[` list"));
            };
            let value = self.rest()[1..end].to_string();
            self.pos += end + 1;
            Ok((col, key, value))
        } else {
            let value: String =
                self.rest().chars().take_while(|c| !c.is_whitespace()).collect();
            if value.is_empty() {
                return Err(self.error(format!("missing value for `{key}`")));
            }
            self.pos += value.len();
            Ok((col, key, value))
        }
    }
}

fn parse_number(cursor: &Cursor, col: usize, key: &str, value: &str) -> Result<f64, ParseError> {
    let n: f64 = value.parse().map_err(|_| {
        ParseError::new(cursor.line, col, format!("invalid number for `{key}`: `{value}`"))
    })?;
    if !n.is_finite() {
        return Err(ParseError::new(cursor.line, col, format!("non-finite value for `{key}`")));
    }
    Ok(n)
}

struct Args {
    line: usize,
    entries: Vec<(usize, String, String)>,
}

impl Args {
    fn take(&mut self, key: &str) -> Result<(usize, String), ParseError> {
        let idx = self
            .entries
            .iter()
            .position(|(_, k, _)| k == key)
            .ok_or_else(|| ParseError::new(self.line, 1, format!("missing argument `{key}`")))?;
        let (col, _, value) = self.entries.remove(idx);
        Ok((col, value))
    }

    fn finish(self) -> Result<(), ParseError> {
        if let Some((col, key, _)) = self.entries.into_iter().next() {
            return Err(ParseError::new(self.line, col, format!("unexpected argument `{key}`")));
        }
        Ok(())
    }
}

fn parse_command(line_no: usize, text: &str) -> Result<Command, ParseError> {
    let mut cursor = Cursor::new(text, line_no);
    let (kw_col, keyword) = cursor.ident()?;
    let mut entries = Vec::new();
    while !cursor.at_end() {
        entries.push(cursor.argument()?);
    }
    let mut args = Args { line: line_no, entries };
    let command = match keyword.as_str() {
        "release_gripper" => Command::ReleaseGripper,
        "translate" => {
            let (axis_col, axis_raw) = args.take("axis")?;
            let axis = match axis_raw.to_ascii_lowercase().as_str() {
                "x" => Axis::X,
                "y" => Axis::Y,
                "z" => Axis::Z,
                other => {
                    return Err(ParseError::new(
                        line_no,
                        axis_col,
                        format!("unknown axis `{other}`"),
                    ))
                }
            };
            let (delta_col, delta_raw) = args.take("delta")?;
            let delta = parse_number(&cursor, delta_col, "delta", &delta_raw)?;
            if delta.abs() > 1.0 {
                return Err(ParseError::new(
                    line_no,
                    delta_col,
                    format!("delta {delta} out of range (|delta| <= 1.0 m)"),
                ));
            }
            Command::Translate { axis, delta }
        }
        "lift_to_safe" => {
            let (col, raw) = args.take("height")?;
            let height = parse_number(&cursor, col, "height", &raw)?;
            Command::LiftToSafe { height }
        }
        "recover_joints" => {
            let (target_col, target_raw) = args.take("target")?;
            let mut values = Vec::new();
            for piece in target_raw.split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                values.push(parse_number(&cursor, target_col, "target", piece)?);
            }
            if values.len() < 2 {
                return Err(ParseError::new(
                    line_no,
                    target_col,
                    "target needs at least one joint angle and a gripper aperture",
                ));
            }
            let gripper = values.pop().expect("length checked");
            if !(0.0..=1.0).contains(&gripper) {
                return Err(ParseError::new(
                    line_no,
                    target_col,
                    format!("gripper aperture {gripper} out of range [0, 1]"),
                ));
            }
            let (steps_col, steps_raw) = args.take("steps")?;
            let steps: usize = steps_raw.parse().map_err(|_| {
                ParseError::new(line_no, steps_col, format!("invalid steps `{steps_raw}`"))
            })?;
            if !(1..=1000).contains(&steps) {
                return Err(ParseError::new(
                    line_no,
                    steps_col,
                    format!("steps {steps} out of range (1..=1000)"),
                ));
            }
            Command::RecoverJoints { target: JointConfiguration::new(values, gripper), steps }
        }
        other => {
            return Err(ParseError::new(line_no, kw_col, format!("unknown command `{other}`")))
        }
    };
    args.finish()?;
    Ok(command)
}

/// Parse DSL source into a program. Empty programs are rejected.
pub fn parse(source: &str) -> Result<TransitionProgram, ParseError> {
    let mut commands = Vec::new();
    for (idx, raw_line) in source.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(h) => &raw_line[..h],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        commands.push(parse_command(idx + 1, line)?);
    }
    if commands.is_empty() {
        return Err(ParseError::new(1, 1, "empty program"));
    }
    Ok(TransitionProgram { commands })
}
