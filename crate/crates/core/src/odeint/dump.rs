//! Trajectory dumps as JSON lines: one `{"s", "z"}` object per depth, `z` as
//! nested rows, followed by a `{"stats"}` trailer.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{SolveStats, Trajectory};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Point {
    s: f64,
    z: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    stats: SolveStats,
}

pub fn write_jsonl<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for (i, &s) in traj.depths.iter().enumerate() {
        let z = traj.at(i)?;
        let (_, d) = crate::tensor::dims2("dump", &z)?;
        let rows = z.data().chunks(d.max(1)).map(<[f64]>::to_vec).collect();
        serde_json::to_writer(&mut out, &Point { s, z: rows })?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &Trailer { stats: traj.stats })?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trajectory> {
    let mut depths = Vec::new();
    let mut states = Vec::new();
    let mut stats = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if stats.is_some() {
            return Err(Error::InvalidArgument("data after trajectory trailer".into()));
        }
        if let Ok(t) = serde_json::from_str::<Trailer>(&line) {
            stats = Some(t.stats);
            continue;
        }
        let p: Point = serde_json::from_str(&line)?;
        states.push(Tensor::from_rows(&p.z)?);
        depths.push(p.s);
    }
    let stats = stats.ok_or_else(|| Error::InvalidArgument("trajectory trailer missing".into()))?;
    if states.is_empty() {
        return Err(Error::InvalidArgument("trajectory has no points".into()));
    }
    Ok(Trajectory {
        points: Tensor::stack(&states)?,
        depths,
        stats,
    })
}
