//! CSV reports. Floats are written with 17 significant digits.

use std::fs::File;
use std::path::Path;

use csv::Writer;

use crate::analysis::{Prediction, VerdictRecord, Verdict};
use crate::convexity::RegionDecomposition;
use crate::dynamics::{SnapshotKind, Trajectory};
use crate::error::Result;
use crate::pipeline::W1Row;

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn writer(dir: &Path, name: &str) -> Result<Writer<File>> {
    Ok(Writer::from_path(dir.join(name))?)
}

pub fn write_regions(dir: &Path, r: &RegionDecomposition) -> Result<()> {
    let mut w = writer(dir, "regions.csv")?;
    w.write_record(["region", "lo", "hi", "interval"])?;
    let mut rows: Vec<(&str, f64, f64, &str)> = vec![];
    rows.extend(r.sigma_plus.iter().map(|&(a, b)| ("sigma_plus", a, b, "(lo,hi]")));
    rows.extend(r.sigma_zero.iter().map(|&(a, b)| ("sigma_zero", a, b, "(lo,hi]")));
    rows.extend(r.sigma_minus.iter().map(|&(a, b)| ("sigma_minus", a, b, "(lo,hi)")));
    rows.extend(r.touching.iter().map(|&m| ("touching", m, m, "[lo,hi]")));
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)));
    for (name, a, b, kind) in rows {
        w.write_record([name, &num(a), &num(b), kind])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prediction(dir: &Path, p: &Prediction) -> Result<()> {
    let mut w = writer(dir, "prediction.csv")?;
    w.write_record(["lo", "hi", "closed", "branch", "verdict", "parameter", "value"])?;
    for r in &p.records {
        let (param, value) = match r.verdict {
            Verdict::FiniteTimeCluster { by } => ("by", by.unwrap_or(f64::INFINITY)),
            Verdict::InfiniteTimeCluster { rate } | Verdict::Separated { rate } => ("rate", rate),
            Verdict::NoCluster | Verdict::ConfinedTo => ("", f64::NAN),
        };
        let value = if param.is_empty() { String::new() } else { num(value) };
        w.write_record([
            num(r.lo).as_str(),
            &num(r.hi),
            if r.closed { "true" } else { "false" },
            r.branch.tag(),
            r.verdict.kind(),
            param,
            &value,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sample snapshots plus the state right after each event.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(dir, &format!("trajectory_N{}.csv", traj.len()))?;
    w.write_record(["kind", "t", "i", "label", "x", "v", "psi", "group"])?;
    let p = traj.simulator().protocol();
    for snap in &traj.snapshots {
        let kind = match snap.kind {
            SnapshotKind::Initial => continue,
            SnapshotKind::Sample => "sample",
            SnapshotKind::Event => "event",
        };
        let st = &snap.state;
        let psi = st.measured_psi(p);
        for (g, grp) in st.groups.iter().enumerate() {
            for i in grp.first..grp.end {
                w.write_record([
                    kind,
                    &num(st.t),
                    &i.to_string(),
                    &num(traj.theta[i + 1]),
                    &num(grp.x),
                    &num(grp.v),
                    &num(psi[g]),
                    &g.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per constituent of each merge.
pub fn write_events(dir: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(dir, &format!("events_N{}.csv", traj.len()))?;
    w.write_record([
        "event", "t", "first", "end", "x", "v_post", "psi_post", "psi_conserved", "part_first", "part_end",
        "part_mass", "part_x", "v_pre", "psi_pre",
    ])?;
    for (k, e) in traj.events.iter().enumerate() {
        for c in &e.constituents {
            w.write_record([
                &k.to_string(),
                &num(e.t),
                &e.first.to_string(),
                &e.end.to_string(),
                &num(e.x),
                &num(e.v),
                &num(e.psi),
                &num(e.psi_conserved),
                &c.first.to_string(),
                &c.end.to_string(),
                &num(c.mass),
                &num(c.x),
                &num(c.v),
                &num(c.psi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_verdicts(dir: &Path, v: &[VerdictRecord]) -> Result<()> {
    let mut w = writer(dir, "verdicts.csv")?;
    w.write_record(["id", "theorem", "n", "t", "empirical", "bound", "margin", "result"])?;
    for r in v {
        w.write_record([
            r.id.as_str(),
            r.theorem,
            &r.n.to_string(),
            &num(r.t),
            &num(r.empirical),
            &num(r.bound),
            &num(r.margin),
            if r.pass { "PASS" } else { "FAIL" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_wasserstein(dir: &Path, rows: &[W1Row]) -> Result<()> {
    let mut w = writer(dir, "wasserstein.csv")?;
    w.write_record(["t", "n", "n_next", "w1"])?;
    for r in rows {
        w.write_record([&num(r.t), &r.n.to_string(), &r.n2.to_string(), &num(r.w1)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest(dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut w = writer(dir, "manifest.csv")?;
    w.write_record(["key", "value"])?;
    for (k, v) in entries {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }
}
