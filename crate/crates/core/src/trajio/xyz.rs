//! Multi-frame (extended) XYZ text.
//!
//! Each frame is an atom-count line, a free-form comment line (extended-XYZ
//! `key=value` pairs are accepted and ignored), then one `symbol x y z` line
//! per atom. Extra per-atom columns after the coordinates are ignored.

use std::fmt::Write as _;

use super::{Result, TrajError, Trajectory};

const ELEMENTS: [(&str, u8); 7] = [
    ("H", 1),
    ("C", 6),
    ("N", 7),
    ("O", 8),
    ("F", 9),
    ("S", 16),
    ("Cl", 17),
];

pub fn symbol_to_atomic_number(symbol: &str) -> Result<u8> {
    ELEMENTS
        .iter()
        .find(|(s, _)| *s == symbol)
        .map(|&(_, z)| z)
        .ok_or_else(|| TrajError::UnknownElement(symbol.to_string()))
}

pub fn element_symbol(z: u8) -> Option<&'static str> {
    ELEMENTS.iter().find(|&&(_, n)| n == z).map(|&(s, _)| s)
}

/// Parse every frame of an XYZ document. `dt` defaults to 1 and the id is
/// empty; callers attach real values with [`Trajectory::with_dt`].
pub fn parse_xyz(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate().peekable();
    let mut frames: Vec<Vec<[f64; 3]>> = Vec::new();
    let mut numbers: Option<Vec<u8>> = None;

    loop {
        // skip blank separator lines between frames
        while let Some((_, l)) = lines.peek() {
            if l.trim().is_empty() {
                lines.next();
            } else {
                break;
            }
        }
        let Some((lineno, count_line)) = lines.next() else {
            break;
        };
        let n: usize = count_line.trim().parse().map_err(|_| {
            TrajError::MalformedInput(format!(
                "line {}: expected atom count, found `{}`",
                lineno + 1,
                count_line.trim()
            ))
        })?;
        if n == 0 {
            return Err(TrajError::MalformedInput(format!(
                "line {}: frame with zero atoms",
                lineno + 1
            )));
        }
        let frame_idx = frames.len();
        if let Some(expected) = numbers.as_ref().map(Vec::len) {
            if expected != n {
                return Err(TrajError::InconsistentFrames {
                    frame: frame_idx,
                    expected,
                    found: n,
                });
            }
        }
        if lines.next().is_none() {
            return Err(TrajError::MalformedInput(format!(
                "frame {frame_idx}: missing comment line"
            )));
        }

        let mut coords = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for a in 0..n {
            let Some((lineno, line)) = lines.next() else {
                return Err(TrajError::MalformedInput(format!(
                    "frame {frame_idx}: expected {n} atom lines, found {a}"
                )));
            };
            let mut tok = line.split_whitespace();
            let sym = tok.next().ok_or_else(|| {
                TrajError::MalformedInput(format!("line {}: empty atom line", lineno + 1))
            })?;
            let mut xyz = [0.0; 3];
            for v in xyz.iter_mut() {
                *v = tok
                    .next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        TrajError::MalformedInput(format!(
                            "line {}: expected `symbol x y z`",
                            lineno + 1
                        ))
                    })?;
            }
            zs.push(symbol_to_atomic_number(sym)?);
            coords.push(xyz);
        }
        match &numbers {
            None => numbers = Some(zs),
            Some(prev) if *prev != zs => {
                return Err(TrajError::MalformedInput(format!(
                    "frame {frame_idx}: element order differs from frame 0"
                )))
            }
            Some(_) => {}
        }
        frames.push(coords);
    }

    let Some(numbers) = numbers else {
        return Err(TrajError::MalformedInput("document contains no frames".into()));
    };
    Trajectory::new(frames, numbers, 1.0, "")
}

/// Render a trajectory as multi-frame XYZ. Coordinates use Rust's shortest
/// round-trip float formatting, so parsing the output recovers them exactly.
pub fn write_xyz(traj: &Trajectory) -> Result<String> {
    let mut out = String::new();
    for (f, frame) in traj.frames().iter().enumerate() {
        let _ = writeln!(out, "{}", traj.n_atoms());
        let _ = writeln!(out, "frame={f} dt={} id={}", traj.dt(), traj.id());
        for (z, c) in traj.atomic_numbers().iter().zip(frame) {
            let sym = element_symbol(*z)
                .ok_or_else(|| TrajError::UnknownElement(format!("Z={z}")))?;
            let _ = writeln!(out, "{sym} {:?} {:?} {:?}", c[0], c[1], c[2]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_hydrogen_molecule() {
        let t = parse_xyz("2\n\nH 0 0 0\nH 0 0 0.74").unwrap();
        assert_eq!(t.atomic_numbers(), &[1, 1]);
        assert_eq!(t.frames(), &[vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.74]]]);
    }

    #[test]
    fn empty_document_is_malformed() {
        assert!(matches!(parse_xyz(""), Err(TrajError::MalformedInput(_))));
        assert!(matches!(parse_xyz("\n\n  \n"), Err(TrajError::MalformedInput(_))));
    }

    #[test]
    fn inconsistent_atom_count_is_rejected() {
        let doc = "2\nf0\nH 0 0 0\nH 0 0 1\n3\nf1\nH 0 0 0\nH 0 0 1\nH 0 1 0\n2\nf2\nH 0 0 0\nH 0 0 1\n";
        match parse_xyz(doc) {
            Err(TrajError::InconsistentFrames {
                frame,
                expected,
                found,
            }) => {
                assert_eq!((frame, expected, found), (1, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_symbol_and_bad_count() {
        assert!(matches!(
            parse_xyz("1\n\nXe 0 0 0\n"),
            Err(TrajError::UnknownElement(s)) if s == "Xe"
        ));
        assert!(matches!(
            parse_xyz("two\n\nH 0 0 0\n"),
            Err(TrajError::MalformedInput(_))
        ));
        assert!(matches!(
            parse_xyz("3\n\nH 0 0 0\n"),
            Err(TrajError::MalformedInput(_))
        ));
    }

    #[test]
    fn extended_columns_and_comment_are_ignored() {
        let doc = "1\nLattice=\"1 0 0\" Properties=species:S:1:pos:R:3\nCl 1.5 -2 3e-1 0.1 0.2\n";
        let t = parse_xyz(doc).unwrap();
        assert_eq!(t.atomic_numbers(), &[17]);
        assert_eq!(t.frames()[0][0], [1.5, -2.0, 0.3]);
    }

    #[test]
    fn write_then_parse_is_exact() {
        let t = Trajectory::new(
            vec![
                vec![[0.1, 0.2, 0.3], [1.0 / 3.0, -2.5, 1e-17]],
                vec![[0.0, 0.0, 0.0], [std::f64::consts::PI, 1.0, 2.0]],
            ],
            vec![6, 8],
            0.5,
            "co",
        )
        .unwrap();
        let back = parse_xyz(&write_xyz(&t).unwrap()).unwrap();
        assert_eq!(back.frames(), t.frames());
        assert_eq!(back.atomic_numbers(), t.atomic_numbers());
    }
}
