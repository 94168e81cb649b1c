//! Dataset CSV (`traj_id,t,u_0,…`) and its metadata sidecar.

use std::fmt::Write as _;

use snde_core::ode::Trajectory;
use snde_core::systems::System;
use snde_core::training::TrajectorySet;
use snde_core::{Error, Result};

pub fn to_csv(set: &TrajectorySet) -> String {
    let n = set.system.dim();
    let mut s = String::from("traj_id,t");
    for k in 0..n {
        let _ = write!(s, ",u_{k}");
    }
    s.push('\n');
    for (id, tr) in set.trajectories.iter().enumerate() {
        for (i, t) in tr.times().iter().enumerate() {
            let _ = write!(s, "{id},{t}");
            for x in tr.state(i) {
                let _ = write!(s, ",{x:e}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn meta_text(set: &TrajectorySet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "system={}", set.system);
    let _ = writeln!(s, "seed={}", set.seed);
    let _ = writeln!(s, "trajectories={}", set.trajectories.len());
    for (k, m) in set.manifolds.iter().enumerate() {
        let r: Vec<String> = m.reference().iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(s, "reference_{k}={}", r.join(";"));
    }
    s
}

/// `(system, seed, trajectories)` recorded in a sidecar.
pub fn parse_meta(text: &str) -> Result<(System, u64, usize)> {
    let mut system = None;
    let mut seed = None;
    let mut n = None;
    for (i, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("bad value '{v}' for {k}"),
        };
        match k {
            "system" => system = Some(v.parse::<System>()?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
            "trajectories" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    match (system, seed, n) {
        (Some(s), Some(seed), Some(n)) => Ok((s, seed, n)),
        _ => Err(Error::Parse {
            line: 0,
            msg: "dataset metadata lacks system, seed or trajectories".into(),
        }),
    }
}

pub fn from_csv(text: &str, system: System, seed: u64) -> Result<TrajectorySet> {
    let n = system.dim();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty dataset".into(),
    })?;
    let cols = header.split(',').count();
    if cols != n + 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected {} columns for {system}, found {cols}", n + 2),
        });
    }
    let mut trajs: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n + 2 {
            return Err(bad(format!("expected {} fields, found {}", n + 2, f.len())));
        }
        let id: usize = f[0].parse().map_err(|_| bad(format!("bad trajectory id '{}'", f[0])))?;
        let t: f64 = f[1].parse().map_err(|_| bad(format!("bad time '{}'", f[1])))?;
        let u = f[2..]
            .iter()
            .map(|x| x.parse::<f64>().map_err(|_| bad(format!("bad value '{x}'"))))
            .collect::<Result<Vec<_>>>()?;
        if id == trajs.len() {
            trajs.push((Vec::new(), Vec::new()));
        } else if id + 1 != trajs.len() {
            return Err(bad(format!("trajectory ids must be contiguous, found {id}")));
        }
        let last = trajs.last_mut().expect("pushed above");
        last.0.push(t);
        last.1.push(u);
    }
    let trajectories = trajs
        .into_iter()
        .map(|(t, rows)| Trajectory::from_rows(t, &rows))
        .collect::<Result<Vec<_>>>()?;
    TrajectorySet::from_trajectories(system, seed, trajectories)
}
