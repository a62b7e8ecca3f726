//! Magnitude-free correction-instruction grammar.
//!
//! Low-level instructions speak in end-effector direction words
//! (forward/backward/left/right/up/down, plus a rotate-back phrase and the
//! firm-regrasp and wait-for-alignment idioms); high-level instructions
//! resequence substages and name objects. Both sides are deterministic:
//! the renderers here produce them, and `parse_instruction` recovers the
//! actionable tokens for the scripted policy. Instructions never contain
//! numeric magnitudes.
//!
//! Axis convention: +X in front of the manipulator, +Y to its left, +Z up;
//! a positive X deviation therefore reads "in front of the desired target
//! position" and its correction is "backward".

use crate::geometry::Position;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: &'static [Direction] = &[
        Direction::Forward,
        Direction::Backward,
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
    ];

    pub fn word(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    fn phrase(&self) -> String {
        match self {
            Direction::Left | Direction::Right => format!("to the {}", self.word()),
            _ => self.word().to_string(),
        }
    }

    /// The axis this direction moves along and its sign.
    pub fn axis_sign(&self) -> (usize, f64) {
        match self {
            Direction::Forward => (0, 1.0),
            Direction::Backward => (0, -1.0),
            Direction::Left => (1, 1.0),
            Direction::Right => (1, -1.0),
            Direction::Up => (2, 1.0),
            Direction::Down => (2, -1.0),
        }
    }
}

/// Corrective directions that undo a position deviation `dp`, in X, Y, Z
/// axis order. Empty when `dp` is zero.
pub fn corrective_directions(dp: &Position) -> Vec<Direction> {
    let mut dirs = Vec::new();
    if dp.x > 0.0 {
        dirs.push(Direction::Backward);
    } else if dp.x < 0.0 {
        dirs.push(Direction::Forward);
    }
    if dp.y > 0.0 {
        dirs.push(Direction::Right);
    } else if dp.y < 0.0 {
        dirs.push(Direction::Left);
    }
    if dp.z > 0.0 {
        dirs.push(Direction::Down);
    } else if dp.z < 0.0 {
        dirs.push(Direction::Up);
    }
    dirs
}

/// Where the end-effector ended up relative to the desired target, per the
/// axis convention; used by failure descriptions.
pub fn deviation_phrases(dp: &Position) -> Vec<&'static str> {
    let mut out = Vec::new();
    if dp.x > 0.0 {
        out.push("in front of the desired target position");
    } else if dp.x < 0.0 {
        out.push("behind the desired target position");
    }
    if dp.y > 0.0 {
        out.push("to the left of the desired target position");
    } else if dp.y < 0.0 {
        out.push("to the right of the desired target position");
    }
    if dp.z > 0.0 {
        out.push("above the desired target position");
    } else if dp.z < 0.0 {
        out.push("below the desired target position");
    }
    out
}

/// Direction-grammar movement phrase undoing `dp`:
/// "Move the end-effector backward, then descend to the target."
pub fn movement_instruction(dp: &Position) -> String {
    let dirs = corrective_directions(dp);
    if dirs.is_empty() {
        return "Proceed as planned.".to_string();
    }
    let mut s = String::from("Move the end-effector ");
    for (i, d) in dirs.iter().enumerate() {
        if i > 0 {
            s.push_str(", then ");
        }
        s.push_str(&d.phrase());
    }
    s.push_str(", then descend to the target.");
    s
}

pub fn rotate_back_instruction() -> String {
    "Rotate the gripper back to the planned orientation, then descend to the target.".to_string()
}

pub fn firm_grasp_instruction(object: &str) -> String {
    format!("Redo the grasp firmly on the '{object}' and hold it closed.")
}

pub fn wait_alignment_instruction() -> String {
    "Wait for the disc to align with the plan before acting.".to_string()
}

/// Actionable tokens the scripted policy extracts from an appended
/// correction instruction. Unrecognized text parses to an empty action set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedInstruction {
    pub directions: Vec<Direction>,
    pub rotate_back: bool,
    pub regrasp_firmly: bool,
    pub wait_for_alignment: bool,
    /// Substage names mentioned in the instruction (matched against a pool).
    pub named_substages: Vec<String>,
    /// Object ids quoted in the instruction.
    pub named_objects: Vec<String>,
}

/// Total parse: extracts whatever the grammar recognizes and ignores the
/// rest. `substage_pool` and `object_pool` supply the names worth matching.
pub fn parse_instruction(
    text: &str,
    substage_pool: &[String],
    object_pool: &[String],
) -> ParsedInstruction {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .collect();

    let mut parsed = ParsedInstruction::default();
    for d in Direction::ALL {
        if words.contains(&d.word()) {
            parsed.directions.push(*d);
        }
    }
    parsed.rotate_back = words.contains(&"rotate");
    parsed.regrasp_firmly = words.contains(&"firmly");
    parsed.wait_for_alignment = words.contains(&"wait");
    for name in substage_pool {
        if lower.contains(&name.to_lowercase()) {
            parsed.named_substages.push(name.clone());
        }
    }
    for obj in object_pool {
        if lower.contains(&format!("'{}'", obj.to_lowercase())) {
            parsed.named_objects.push(obj.clone());
        }
    }
    parsed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(x: f64, y: f64, z: f64) -> Position {
        Position::new(x, y, z).unwrap()
    }

    #[test]
    fn forward_overshoot_corrects_backward() {
        let s = movement_instruction(&pos(0.05, 0.0, 0.0));
        assert_eq!(
            s,
            "Move the end-effector backward, then descend to the target."
        );
    }

    #[test]
    fn right_deviation_corrects_left() {
        let s = movement_instruction(&pos(0.0, -0.04, 0.0));
        assert!(s.contains("left"));
        assert!(!s.contains("right"));
    }

    #[test]
    fn zero_deviation_proceeds_as_planned() {
        assert_eq!(movement_instruction(&Position::ZERO), "Proceed as planned.");
    }

    #[test]
    fn deviation_phrase_follows_axis_convention() {
        assert!(deviation_phrases(&pos(0.05, 0.0, 0.0))
            .contains(&"in front of the desired target position"));
        assert!(deviation_phrases(&pos(0.0, -0.04, 0.0))
            .contains(&"to the right of the desired target position"));
        assert!(
            deviation_phrases(&pos(0.0, 0.0, -0.03)).contains(&"below the desired target position")
        );
    }

    #[test]
    fn instructions_contain_no_digits() {
        for dp in [pos(0.05, -0.04, 0.12), pos(-0.1, 0.0, 0.0)] {
            assert!(!movement_instruction(&dp)
                .chars()
                .any(|c| c.is_ascii_digit()));
        }
        assert!(!rotate_back_instruction()
            .chars()
            .any(|c| c.is_ascii_digit()));
        assert!(!wait_alignment_instruction()
            .chars()
            .any(|c| c.is_ascii_digit()));
    }

    #[test]
    fn parse_recovers_rendered_tokens() {
        let text = movement_instruction(&pos(0.05, -0.04, 0.0));
        let parsed = parse_instruction(&text, &[], &[]);
        assert_eq!(
            parsed.directions,
            vec![Direction::Backward, Direction::Left]
        );
        assert!(!parsed.rotate_back);

        let parsed = parse_instruction(&rotate_back_instruction(), &[], &[]);
        assert!(parsed.rotate_back);
        // "descend" in movement phrases must not read as "down".
        let parsed = parse_instruction(&movement_instruction(&pos(0.05, 0.0, 0.0)), &[], &[]);
        assert!(!parsed.directions.contains(&Direction::Down));
    }

    #[test]
    fn parse_matches_pool_names() {
        let pool = vec!["grasp the cube".to_string(), "lift the cube".to_string()];
        let objs = vec!["cube_red".to_string()];
        let p = parse_instruction(
            "Go back and perform 'grasp the cube' on the 'cube_red' first.",
            &pool,
            &objs,
        );
        assert_eq!(p.named_substages, vec!["grasp the cube".to_string()]);
        assert_eq!(p.named_objects, vec!["cube_red".to_string()]);
    }

    #[test]
    fn unrecognized_text_parses_to_no_actions() {
        let p = parse_instruction("the weather is lovely today", &[], &[]);
        assert_eq!(p, ParsedInstruction::default());
    }
}
