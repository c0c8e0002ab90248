//! Text formats for trajectories, count matrices and real matrices.
//!
//! * Trajectory: a header line `# p=<int>` followed by one state per line.
//! * Counts: `p` rows of `p` comma-separated integers.
//! * Matrix: rows of comma-separated reals with 17 significant digits, enough
//!   to round-trip every `f64`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::chain::{Trajectory, TransitionCounts};
use crate::error::{invalid, Error, Result};

pub fn write_trajectory<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    writeln!(w, "# p={}", traj.p())?;
    for s in traj.states() {
        writeln!(w, "{s}")?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(r: R) -> Result<Trajectory> {
    let mut p = None;
    let mut states = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if p.is_none() && states.is_empty() {
                let v =
                    rest.trim().strip_prefix("p=").ok_or_else(|| parse_err(lineno, "expected header `# p=<int>`"))?;
                p = Some(v.trim().parse::<usize>().map_err(|e| parse_err(lineno, e))?);
            }
            continue;
        }
        if p.is_none() {
            return Err(parse_err(lineno, "missing header `# p=<int>`"));
        }
        states.push(t.parse::<usize>().map_err(|e| parse_err(lineno, e))?);
    }
    let p = p.ok_or_else(|| parse_err(1, "missing header `# p=<int>`"))?;
    Trajectory::new(states, p)
}

pub fn write_counts<W: Write>(mut w: W, c: &TransitionCounts) -> std::io::Result<()> {
    for row in c.rows() {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_counts<R: BufRead>(r: R) -> Result<TransitionCounts> {
    let rows = read_rows(r, |s| s.parse::<u64>().map_err(|e| e.to_string()))?;
    TransitionCounts::from_rows(&rows)
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let rows = read_rows(r, |s| s.parse::<f64>().map_err(|e| e.to_string()))?;
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn read_rows<R: BufRead, T>(r: R, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .map(|f| parse(f).map_err(|e| parse_err(line, format!("`{f}`: {e}"))))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("matrix file is empty"));
    }
    Ok(rows)
}

fn parse_err(line: usize, e: impl ToString) -> Error {
    Error::Parse { line, message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_round_trip() {
        let t = Trajectory::new(vec![0, 2, 1, 1, 0], 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "# p=3\n0\n2\n1\n1\n0\n");
        assert_eq!(read_trajectory(&buf[..]).unwrap(), t);
    }

    #[test]
    fn trajectory_errors_carry_line_numbers() {
        match read_trajectory("# p=2\n0\nx\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_trajectory("0\n1\n".as_bytes()).is_err());
        assert!(matches!(read_trajectory("# p=2\n0\n5\n".as_bytes()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn counts_round_trip() {
        let c = TransitionCounts::from_rows(&[vec![0, 2], vec![1, 0]]).unwrap();
        let mut buf = Vec::new();
        write_counts(&mut buf, &c).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0,2\n1,0\n");
        assert_eq!(read_counts(&buf[..]).unwrap(), c);
        assert!(matches!(read_counts("1,2\n3,-1\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, 2.0f64.sqrt() / 7.0, 1e-300]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);
    }
}
