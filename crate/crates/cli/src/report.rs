//! Text outputs: per-epoch traces, ADOP sweep, fixes, skyplot and the summary table.

use crate::metrics::{improvement, EpochStatus, MetricsReport};
use crate::pipeline::{AdopRow, SkyRow};
use crate::EvalError;
use canyon_rtk::io::DatasetError;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Summary column labels, in table order.
pub const SUMMARY_LABELS: [&str; 10] = [
    "2D MEAN",
    "2D MAX",
    "2D STD",
    "2D IMPR.",
    "3D MEAN",
    "3D MAX",
    "3D STD",
    "3D IMPR.",
    "FIXED RATE",
    "AVAIL.",
];

/// Method name improvements are measured against.
pub const BASELINE: &str = "rtk_only";

pub const ERRORS_FILE: &str = "errors.csv";
pub const STATUS_FILE: &str = "status.csv";
pub const ADOP_FILE: &str = "adop_sweep.csv";
pub const FIXES_FILE: &str = "fixes.csv";
pub const SKYPLOT_FILE: &str = "skyplot.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}%")).unwrap_or_default()
}

/// One row of the summary table per method, with improvements against `rtk_only` when present.
pub fn summary_table(methods: &[(String, MetricsReport)]) -> String {
    let mut s = String::from("method");
    for l in SUMMARY_LABELS {
        s.push(',');
        s.push_str(l);
    }
    s.push('\n');
    let base = methods.iter().find(|(n, _)| n == BASELINE).map(|(_, r)| r);
    for (name, r) in methods {
        let impr = |f: fn(&MetricsReport) -> f64| match base {
            Some(b) if name != BASELINE => improvement(f(b), f(r)),
            _ => None,
        };
        let cells = [
            format!("{:.3}", r.horizontal.mean),
            format!("{:.3}", r.horizontal.max),
            format!("{:.3}", r.horizontal.std),
            pct(impr(|r| r.horizontal.mean)),
            format!("{:.3}", r.spatial.mean),
            format!("{:.3}", r.spatial.max),
            format!("{:.3}", r.spatial.std),
            pct(impr(|r| r.spatial.mean)),
            pct(Some(r.fix_rate)),
            pct(Some(r.availability)),
        ];
        s.push_str(name);
        for c in cells {
            s.push(',');
            s.push_str(&c);
        }
        s.push('\n');
    }
    s
}

/// Aligned plain-text rendering of the summary for the terminal.
pub fn summary_text(methods: &[(String, MetricsReport)]) -> String {
    let table = summary_table(methods);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    let mut out = String::new();
    // transpose so that labels run down the side
    for c in 0..rows[0].len() {
        let label = if c == 0 { "ALL DATA" } else { rows[0][c] };
        let _ = write!(out, "{label:<12}");
        for r in &rows[1..] {
            let _ = write!(out, "{:>14}", r[c]);
        }
        out.push('\n');
    }
    out
}

pub struct Reports<'a> {
    pub methods: &'a [(String, MetricsReport)],
    /// Which entry of `methods` the per-epoch trace comes from.
    pub traced: Option<&'a MetricsReport>,
    pub statuses: &'a [EpochStatus],
    pub skyplot: &'a [SkyRow],
    pub adop: &'a [AdopRow],
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, EvalError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| EvalError::io(&path, e))?;
    Ok(path)
}

/// Writes only the `(epoch, vs_weight, ADOP)` rows.
pub fn write_adop(dir: &Path, rows: &[AdopRow]) -> Result<PathBuf, EvalError> {
    let mut s = String::from("epoch,vs_weight,adop\n");
    for a in rows {
        let _ = writeln!(s, "{},{},{}", a.epoch, a.vs_weight, opt(a.adop, 6));
    }
    write(dir, ADOP_FILE, &s)
}

#[derive(Deserialize)]
struct StatusRow {
    epoch: usize,
    t: f64,
    solved: u8,
    fixed: u8,
    ratio: f64,
    n_dd: usize,
    n_excluded: usize,
    adop: Option<f64>,
    east: Option<f64>,
    north: Option<f64>,
    up: Option<f64>,
}

/// Reads a status file written by [`emit_reports`].
pub fn read_status_file(path: &Path) -> Result<Vec<EpochStatus>, DatasetError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| DatasetError::invalid(path, e.to_string()))?;
    r.deserialize::<StatusRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| DatasetError::parse(path, i + 2, e.to_string()))?;
            Ok(EpochStatus {
                epoch: row.epoch,
                t: row.t,
                solved: row.solved != 0,
                fixed: row.fixed != 0,
                ratio: row.ratio,
                n_dd: row.n_dd,
                n_excluded: row.n_excluded,
                adop: row.adop,
                east: row.east,
                north: row.north,
                up: row.up,
            })
        })
        .collect()
}

/// Writes every report into `dir` and returns the paths written.
pub fn emit_reports(dir: &Path, r: &Reports<'_>) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut files = Vec::new();

    let mut s = String::from("t,error_2d,error_3d,fixed\n");
    for e in r.traced.map(|m| m.trace.as_slice()).unwrap_or_default() {
        let _ = writeln!(s, "{:.3},{:.6},{:.6},{}", e.t, e.error_2d, e.error_3d, e.fixed as u8);
    }
    files.push(write(dir, ERRORS_FILE, &s)?);

    let mut s = String::from("epoch,t,solved,fixed,ratio,n_dd,n_excluded,adop,east,north,up\n");
    for st in r.statuses {
        let _ = writeln!(
            s,
            "{},{:.3},{},{},{:.4},{},{},{},{},{},{}",
            st.epoch,
            st.t,
            st.solved as u8,
            st.fixed as u8,
            st.ratio,
            st.n_dd,
            st.n_excluded,
            opt(st.adop, 6),
            opt(st.east, 6),
            opt(st.north, 6),
            opt(st.up, 6)
        );
    }
    files.push(write(dir, STATUS_FILE, &s)?);

    files.push(write_adop(dir, r.adop)?);

    let mut s = String::from("epoch,t,east,north,up\n");
    for st in r.statuses.iter().filter(|s| s.fixed) {
        if let Some([e, n, u]) = st.position() {
            let _ = writeln!(s, "{},{:.3},{e:.6},{n:.6},{u:.6}", st.epoch, st.t);
        }
    }
    files.push(write(dir, FIXES_FILE, &s)?);

    let mut s = String::from("epoch,t,sat,azimuth_deg,elevation_deg,nlos,excluded\n");
    for k in r.skyplot {
        let _ = writeln!(
            s,
            "{},{:.3},{},{:.3},{:.3},{},{}",
            k.epoch, k.t, k.sat, k.azimuth_deg, k.elevation_deg, k.nlos as u8, k.excluded as u8
        );
    }
    files.push(write(dir, SKYPLOT_FILE, &s)?);

    files.push(write(dir, SUMMARY_FILE, &summary_table(r.methods))?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ErrorSample, Stats};

    fn report(mean3: f64, fix: f64) -> MetricsReport {
        MetricsReport {
            horizontal: Stats {
                mean: mean3 / 2.0,
                max: mean3,
                std: 0.1,
            },
            spatial: Stats {
                mean: mean3,
                max: 2.0 * mean3,
                std: 0.2,
            },
            fix_rate: fix,
            availability: 100.0,
            trace: vec![ErrorSample {
                t: 0.5,
                error_2d: 0.1,
                error_3d: 0.2,
                fixed: true,
            }],
        }
    }

    #[test]
    fn summary_columns_follow_the_table_labels() {
        let t = summary_table(&[]);
        assert_eq!(
            t,
            "method,2D MEAN,2D MAX,2D STD,2D IMPR.,3D MEAN,3D MAX,3D STD,3D IMPR.,FIXED RATE,AVAIL.\n"
        );
    }

    #[test]
    fn improvement_is_against_rtk_only() {
        let m = vec![("rtk_only".to_string(), report(4.0, 10.0)), ("fgo_vs_nlos".to_string(), report(1.0, 30.0))];
        let t = summary_table(&m);
        let rows: Vec<Vec<&str>> = t.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(rows[1][4], "");
        assert_eq!(rows[2][4], "75.00%");
        assert_eq!(rows[2][8], "75.00%");
        assert_eq!(rows[2][9], "30.00%");
        assert!(summary_text(&m).starts_with("ALL DATA"));
    }

    #[test]
    fn empty_inputs_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(
            dir.path(),
            &Reports {
                methods: &[],
                traced: None,
                statuses: &[],
                skyplot: &[],
                adop: &[],
            },
        )
        .unwrap();
        assert_eq!(files.len(), 6);
        for f in files {
            let text = std::fs::read_to_string(&f).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", f.display());
        }
    }

    #[test]
    fn adop_sweep_has_one_row_per_epoch_and_weight() {
        let dir = tempfile::tempdir().unwrap();
        let adop: Vec<AdopRow> = [0.0, 0.5, 1.0]
            .iter()
            .flat_map(|&w| {
                (0..4).map(move |e| AdopRow {
                    epoch: e,
                    vs_weight: w,
                    adop: Some(1.0 - w / 4.0),
                })
            })
            .collect();
        emit_reports(
            dir.path(),
            &Reports {
                methods: &[],
                traced: None,
                statuses: &[],
                skyplot: &[],
                adop: &adop,
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join(ADOP_FILE)).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.contains("\n3,0.5,0.875000\n"));
    }

    #[test]
    fn status_file_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = vec![EpochStatus::unsolved(0, 0.5), EpochStatus::unsolved(1, 1.5)];
        st[1].solved = true;
        st[1].fixed = true;
        st[1].ratio = 7.25;
        st[1].adop = Some(0.125);
        st[1].east = Some(1.5);
        st[1].north = Some(-2.25);
        st[1].up = Some(0.75);
        emit_reports(
            dir.path(),
            &Reports {
                methods: &[],
                traced: None,
                statuses: &st,
                skyplot: &[],
                adop: &[],
            },
        )
        .unwrap();
        assert_eq!(read_status_file(&dir.path().join(STATUS_FILE)).unwrap(), st);
        let fixes = std::fs::read_to_string(dir.path().join(FIXES_FILE)).unwrap();
        assert_eq!(fixes.lines().count(), 2);
    }
}
