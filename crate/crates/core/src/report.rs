//! Writing results to disk: CSV or JSON documents, gnuplot scripts and a
//! manifest of SHA-256 content hashes. File names depend only on the kind
//! of result, so identical inputs give byte-identical directories.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::case_study::CaseStudyReport;
use crate::discrete::{DiscreteTrajectory, ValueTable};
use crate::error::{AuctionError, Result};
use crate::filippov::ContinuousTrajectory;
use crate::semilinear::{ValueGrid, ValueSurface};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Format, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (csv or json)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

pub enum RunOutput {
    ValueMap(ValueGrid),
    Trajectory(ContinuousTrajectory),
    Discrete(DiscreteTrajectory),
    Table(ValueTable),
    Surface(ValueSurface),
    CaseStudy(Box<CaseStudyReport>),
    /// Any other serialisable result, written as `<name>.json`.
    Document { name: String, value: Value },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn json<T: Serialize>(x: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(x)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn reachable_plot(csv: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key off\nset xlabel 'p1'\nset ylabel 'p2'\nset cblabel 'W'\n\
         set title '{title}'\n\
         plot '{csv}' skip 1 using 1:2:5 with points pointtype 7 palette\n"
    )
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn artifacts(out: &RunOutput, format: Format) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    match out {
        RunOutput::ValueMap(g) => {
            files.push(("value_map.csv".into(), g.to_csv()?.into_bytes()));
            files.push(("value_map.gp".into(), g.gnuplot_script("value_map.csv").into_bytes()));
            if format == Format::Json {
                files.push(("value_map.json".into(), json(g)?));
            }
        }
        RunOutput::Trajectory(t) => match format {
            Format::Csv => files.push(("trajectory.csv".into(), t.to_csv().into_bytes())),
            Format::Json => files.push(("trajectory.json".into(), json(t)?)),
        },
        RunOutput::Discrete(t) => match format {
            Format::Csv => files.push(("discrete.csv".into(), t.to_csv().into_bytes())),
            Format::Json => files.push(("discrete.json".into(), json(t)?)),
        },
        RunOutput::Table(t) => match format {
            Format::Csv => files.push(("value_table.csv".into(), t.to_csv().into_bytes())),
            Format::Json => {
                let rows: Vec<_> = t.rows().collect();
                files.push(("value_table.json".into(), json(&rows)?));
            }
        },
        RunOutput::Surface(s) => {
            files.push(("surface.json".into(), json(s)?));
            if format == Format::Csv {
                let mut csv = String::from("region,g,c,switch_to,pieces\n");
                for (i, r) in s.regions.iter().enumerate() {
                    csv.push_str(&format!(
                        "{i},\"{}\",{},{},{}\n",
                        r.value.g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                        r.value.c,
                        r.switch_to.as_ref().map(|b| format!("\"{}\"", String::from(b.clone()))).unwrap_or_default(),
                        r.pieces.len()
                    ));
                }
                files.push(("surface_regions.csv".into(), csv.into_bytes()));
            }
        }
        RunOutput::CaseStudy(r) => {
            for (i, role) in r.roles.iter().enumerate() {
                let stem = format!("reachable_{}", slug(&role.player));
                let csv = format!("{stem}.csv");
                files.push((csv.clone(), r.reachable_csv(i).into_bytes()));
                let title = format!("W of {} against straightforward {}", role.player, role.opponent);
                files.push((format!("{stem}.gp"), reachable_plot(&csv, &title).into_bytes()));
            }
            match format {
                Format::Json => files.push(("case_study.json".into(), json(r)?)),
                Format::Csv => {
                    let mut s = String::from("player,opponent,best_bundle,best_value,optimal_value,value_at_p_max,reach_witness\n");
                    for role in &r.roles {
                        s.push_str(&format!(
                            "{},{},\"{}\",{},{},{},\"{}\"\n",
                            role.player,
                            role.opponent,
                            String::from(role.best_bundle.clone()),
                            role.best_value,
                            role.optimal_value,
                            role.value_at_p_max,
                            role.reach_witness.as_ref().map(|p| p.to_string()).unwrap_or_default()
                        ));
                    }
                    files.push(("case_study_summary.csv".into(), s.into_bytes()));
                }
            }
        }
        RunOutput::Document { name, value } => files.push((format!("{name}.json"), json(value)?)),
    }
    Ok(files)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every artifact of `outputs` plus `manifest.json` into `out_dir`.
pub fn emit_report(outputs: &[RunOutput], format: Format, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    for out in outputs {
        for (name, bytes) in artifacts(out, format)? {
            if entries.iter().any(|e: &ManifestEntry| e.file == name) {
                return Err(AuctionError::Unsupported(format!("two results both write `{name}`")));
            }
            std::fs::write(out_dir.join(&name), &bytes)?;
            entries.push(ManifestEntry {
                file: name,
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = Manifest { artifacts: entries };
    std::fs::write(out_dir.join(MANIFEST), json(&manifest)?)?;
    Ok(manifest)
}

/// Re-hashes every listed artifact; returns the files whose content changed.
pub fn verify_manifest(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let m: Manifest = serde_json::from_slice(&std::fs::read(out_dir.join(MANIFEST))?)?;
    let mut bad = Vec::new();
    for e in m.artifacts {
        let p = out_dir.join(&e.file);
        match std::fs::read(&p) {
            Ok(b) if sha256_hex(&b) == e.sha256 => {}
            _ => bad.push(p),
        }
    }
    Ok(bad)
}

/// Reloads a trajectory document and rechecks its invariants.
pub fn load_trajectory(
    path: &Path,
    v: &crate::valuation::Valuation,
    m: &[u32],
) -> Result<ContinuousTrajectory> {
    let t: ContinuousTrajectory = serde_json::from_slice(&std::fs::read(path)?)?;
    t.check_invariants(v, m).map_err(|msg| AuctionError::Schema {
        path: path.display().to_string(),
        message: msg,
    })?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::enumerate_cells;
    use crate::filippov::trace;
    use crate::lattice::{Bundle, Price};
    use crate::rational::Q;
    use crate::semilinear::{value_map, ValueKind};
    use crate::valuation::fixtures::{inst11, v_sub};
    use crate::valuation::Valuation;

    fn grid() -> ValueGrid {
        let cc = enumerate_cells(&v_sub()).unwrap();
        let w = Valuation::from_ints(vec![1, 1], &[0, 9, 10, 14]).unwrap();
        let lo = vec![Q::new(1, 7), Q::new(1, 9)];
        let hi = vec![Q::int(6), Q::int(6)];
        value_map(ValueKind::V, &Bundle(vec![1, 1]), &lo, &hi, &[6, 6], &cc, &inst11(), &w).unwrap()
    }

    #[test]
    fn value_map_files_and_determinism() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = emit_report(&[RunOutput::ValueMap(grid())], Format::Csv, a.path()).unwrap();
        let m2 = emit_report(&[RunOutput::ValueMap(grid())], Format::Csv, b.path()).unwrap();
        let names: Vec<_> = m1.artifacts.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(names, ["value_map.csv", "value_map.gp"]);
        assert_eq!(m1, m2);
        assert!(a.path().join(MANIFEST).exists());
        assert!(verify_manifest(a.path()).unwrap().is_empty());
        std::fs::write(a.path().join("value_map.csv"), "tampered").unwrap();
        assert_eq!(verify_manifest(a.path()).unwrap().len(), 1);
    }

    #[test]
    fn json_value_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid();
        emit_report(&[RunOutput::ValueMap(g.clone())], Format::Json, dir.path()).unwrap();
        let back: ValueGrid =
            serde_json::from_slice(&std::fs::read(dir.path().join("value_map.json")).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn trajectory_round_trip_checks_invariants() {
        let v = v_sub();
        let cc = enumerate_cells(&v).unwrap();
        let inst = inst11();
        let t = trace(&Bundle(vec![1, 1]), &Price(vec![Q::ZERO, Q::ZERO]), &cc, &inst).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[RunOutput::Trajectory(t.clone())], Format::Json, dir.path()).unwrap();
        let path = dir.path().join("trajectory.json");
        assert_eq!(load_trajectory(&path, &v, &inst.m).unwrap(), t);

        let mut broken = t.clone();
        broken.segments[0].velocity = vec![Q::int(5), Q::ZERO];
        std::fs::write(&path, serde_json::to_vec(&broken).unwrap()).unwrap();
        assert!(matches!(load_trajectory(&path, &v, &inst.m), Err(AuctionError::Schema { .. })));
    }

    #[test]
    fn unwritable_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        std::fs::write(&file, "x").unwrap();
        let r = emit_report(&[RunOutput::ValueMap(grid())], Format::Csv, &file.join("sub"));
        assert!(matches!(r, Err(AuctionError::Io(_))));
    }
}
