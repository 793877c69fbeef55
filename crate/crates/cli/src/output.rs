use std::path::Path;

use anyhow::Context;
use beamstab::analysis::TargetMonitor;
use beamstab::{GainSet, KernelSet, SpatialGrid, TimeSeries};

fn writer(dir: &Path, name: &str) -> anyhow::Result<csv::Writer<std::fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn row(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(|v| v.to_string()).collect()
}

pub const GAIN_HEADER: [&str; 9] = ["y", "k11", "k12", "k21", "k22", "l11", "l12", "l21", "l22"];

pub fn write_gains(dir: &Path, gains: &GainSet, grid: &SpatialGrid) -> anyhow::Result<()> {
    let mut w = writer(dir, "gains.csv")?;
    w.write_record(GAIN_HEADER)?;
    for j in 0..=gains.n {
        let (k, l) = (gains.k[j], gains.l[j]);
        w.write_record(row([
            grid.x(j),
            k[(0, 0)],
            k[(0, 1)],
            k[(1, 0)],
            k[(1, 1)],
            l[(0, 0)],
            l[(0, 1)],
            l[(1, 0)],
            l[(1, 1)],
        ]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_phi(dir: &Path, set: &KernelSet, grid: &SpatialGrid) -> anyhow::Result<()> {
    let mut w = writer(dir, "phi.csv")?;
    w.write_record(["x", "phi11", "phi12", "phi21", "phi22"])?;
    for (i, m) in set.phi.values.iter().enumerate() {
        w.write_record(row([grid.x(i), m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `gains.csv` back as rows of nine numbers.
pub fn read_gains(path: &Path) -> anyhow::Result<Vec<[f64; 9]>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == GAIN_HEADER, "{}: unexpected header {:?}", path.display(), header);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut out = [0.0; 9];
        for (slot, field) in out.iter_mut().zip(rec.iter()) {
            *slot = field
                .trim()
                .parse()
                .with_context(|| format!("{}: `{field}` is not a number", path.display()))?;
        }
        anyhow::ensure!(rec.len() == 9, "{}: row with {} fields", path.display(), rec.len());
        rows.push(out);
    }
    Ok(rows)
}

pub fn write_snapshots(dir: &Path, series: &TimeSeries, grid: &SpatialGrid) -> anyhow::Result<()> {
    let mut w = writer(dir, "snapshots.csv")?;
    w.write_record(["t", "x", "u", "alpha", "ut", "alphat"])?;
    for s in &series.snapshots {
        let ps = &s.physical;
        for i in 0..grid.len() {
            w.write_record(row([s.t, grid.x(i), ps.u[i], ps.alpha[i], ps.ut[i], ps.alphat[i]]))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per time step. `V_lyap` is filled at snapshot times only and left
/// empty elsewhere, and everywhere in open loop.
pub fn write_energy(dir: &Path, series: &TimeSeries, monitor: Option<&TargetMonitor>) -> anyhow::Result<()> {
    let mut w = writer(dir, "energy.csv")?;
    w.write_record(["t", "E_h1", "V_lyap", "Vp", "Vr"])?;
    let mut next = 0;
    for (k, t) in series.times.iter().enumerate() {
        let mut v = String::new();
        if let Some(m) = monitor {
            if next < m.times.len() && m.times[next] == *t {
                v = m.lyapunov[next].to_string();
                next += 1;
            }
        }
        let c = &series.controls[k];
        w.write_record([t.to_string(), series.energy[k].to_string(), v, c.vp.to_string(), c.vr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_controls(dir: &Path, series: &TimeSeries) -> anyhow::Result<()> {
    let mut w = writer(dir, "controls.csv")?;
    w.write_record(["t", "Vp", "Vr", "V1", "V2"])?;
    for (t, c) in series.times.iter().zip(&series.controls) {
        w.write_record(row([*t, c.vp, c.vr, c.v1, c.v2]))?;
    }
    w.flush()?;
    Ok(())
}

/// One line of `sweep.csv`. Failed pairs carry NaN in the result columns.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub delta1: f64,
    pub delta2: f64,
    pub c2: f64,
    pub fitted_rate: f64,
    pub final_energy_ratio: f64,
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> anyhow::Result<()> {
    let mut w = writer(dir, "sweep.csv")?;
    w.write_record(["delta1", "delta2", "C2", "fitted_rate", "final_energy_ratio"])?;
    for r in rows {
        w.write_record(row([r.delta1, r.delta2, r.c2, r.fitted_rate, r.final_energy_ratio]))?;
    }
    w.flush()?;
    Ok(())
}
