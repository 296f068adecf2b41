//! Trajectory CSV and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use spincm::state::Trajectory;

/// One row per particle per level:
/// `p, i, re_x, im_x, re_xdot, im_xdot, re_a_1, im_a_1, …, re_b_N, im_b_N`.
pub fn trajectory_csv(traj: &Trajectory) -> anyhow::Result<String> {
    let n = traj.params.n_spin;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["p", "i", "re_x", "im_x", "re_xdot", "im_xdot"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for v in ["a", "b"] {
        for g in 1..=n {
            header.push(format!("re_{v}_{g}"));
            header.push(format!("im_{v}_{g}"));
        }
    }
    w.write_record(&header)?;
    for s in &traj.states {
        for i in 0..s.n_particles() {
            let mut row = vec![
                s.level.to_string(),
                i.to_string(),
                s.x[i].re.to_string(),
                s.x[i].im.to_string(),
                s.xdot[i].re.to_string(),
                s.xdot[i].im.to_string(),
            ];
            for m in [&s.a, &s.b] {
                for g in 0..n {
                    row.push(m[(i, g)].re.to_string());
                    row.push(m[(i, g)].im.to_string());
                }
            }
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    Ok(String::from_utf8(bytes)?)
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(tmp, path).with_context(|| format!("writing {}", path.display()))
}
