//! Trial rows, per-group aggregates, the binary report and CSV exports.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::TrackerKind;
use crate::error::{Error, Result};
use crate::sim::ScenarioName;

pub const REPORT_MAGIC: &[u8; 4] = b"UCFR";
pub const REPORT_VERSION: u32 = 1;

/// Metrics of one trial. Trials whose target was never identified carry
/// `fs = 0` and NaN for the other metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub subject: String,
    pub tracker: TrackerKind,
    pub scenario: ScenarioName,
    pub trial: usize,
    pub de: f64,
    pub fs: f64,
    pub fps: f64,
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation of the finite values.
pub fn stat(values: impl IntoIterator<Item = f64>) -> Stat {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = v.len() as f64;
    // Shifting by the first value keeps the mean of identical values exact.
    let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stat { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub tracker: TrackerKind,
    pub scenario: ScenarioName,
    /// `None` pools every subject.
    pub subject: Option<String>,
    pub trials: usize,
    pub de: Stat,
    pub fs: Stat,
    pub fps: Stat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<TrialRow>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("report is truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("report string is not UTF-8".into()))
    }
}

impl MetricsReport {
    /// Groups in first-seen order, pooled over subjects or split by subject.
    pub fn aggregates(&self, by_subject: bool) -> Vec<Aggregate> {
        let mut keys: Vec<(TrackerKind, ScenarioName, Option<String>)> = Vec::new();
        for r in &self.rows {
            let k = (r.tracker, r.scenario, by_subject.then(|| r.subject.clone()));
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(tracker, scenario, subject)| {
                let rows: Vec<&TrialRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.tracker == tracker && r.scenario == scenario)
                    .filter(|r| subject.as_ref().map_or(true, |s| *s == r.subject))
                    .collect();
                Aggregate {
                    tracker,
                    scenario,
                    subject,
                    trials: rows.len(),
                    de: stat(rows.iter().map(|r| r.de)),
                    fs: stat(rows.iter().map(|r| r.fs)),
                    fps: stat(rows.iter().map(|r| r.fps)),
                }
            })
            .collect()
    }

    pub fn aggregate(&self, tracker: TrackerKind, scenario: ScenarioName) -> Option<Aggregate> {
        self.aggregates(false)
            .into_iter()
            .find(|a| a.tracker == tracker && a.scenario == scenario)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(REPORT_MAGIC);
        out.extend_from_slice(&REPORT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        for r in &self.rows {
            put_str(&mut out, &r.subject);
            put_str(&mut out, r.tracker.as_str());
            put_str(&mut out, r.scenario.as_str());
            out.extend_from_slice(&(r.trial as u32).to_le_bytes());
            for v in [r.de, r.fs, r.fps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(r.initialized as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != REPORT_MAGIC {
            return Err(Error::Format("not a report file (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != REPORT_VERSION {
            return Err(Error::Format(format!("unsupported report version {version}")));
        }
        let n = c.u32()? as usize;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let subject = c.string()?;
            let tracker = c.string()?.parse()?;
            let scenario = c.string()?.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
            let trial = c.u32()? as usize;
            let (de, fs, fps) = (c.f64()?, c.f64()?, c.f64()?);
            let initialized = c.take(1)?[0] != 0;
            rows.push(TrialRow {
                subject,
                tracker,
                scenario,
                trial,
                de,
                fs,
                fps,
                initialized,
            });
        }
        if c.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after report rows".into()));
        }
        Ok(MetricsReport { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        MetricsReport::from_bytes(&bytes)
    }

    /// Writes `summary.csv`, `summary_by_subject.csv`, `trials.csv` and one
    /// file per metric grouped by tracker and scenario.
    pub fn write_csv(&self, dir: &Path, fps_floor: f64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        let summary = |by_subject: bool| {
            let mut s = String::from(if by_subject { "subject," } else { "" });
            s.push_str("tracker,scenario,trials,de_mean,de_std,fs_mean,fs_std,fps_mean,fps_std,realtime\n");
            for a in self.aggregates(by_subject) {
                if let Some(sub) = &a.subject {
                    write!(s, "{sub},").unwrap();
                }
                writeln!(
                    s,
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3},{}",
                    a.tracker,
                    a.scenario,
                    a.trials,
                    a.de.mean,
                    a.de.std,
                    a.fs.mean,
                    a.fs.std,
                    a.fps.mean,
                    a.fps.std,
                    if a.fps.mean >= fps_floor { "yes" } else { "no" }
                )
                .unwrap();
            }
            s
        };
        write("summary.csv", summary(false))?;
        write("summary_by_subject.csv", summary(true))?;

        let mut trials = String::from("subject,tracker,scenario,trial,de,fs,fps,initialized\n");
        for r in &self.rows {
            writeln!(
                trials,
                "{},{},{},{},{:.6},{:.6},{:.3},{}",
                r.subject, r.tracker, r.scenario, r.trial, r.de, r.fs, r.fps, r.initialized as u8
            )
            .unwrap();
        }
        write("trials.csv", trials)?;

        let groups = self.aggregates(false);
        for (name, get) in [
            ("de.csv", (|r: &TrialRow| r.de) as fn(&TrialRow) -> f64),
            ("fs.csv", |r: &TrialRow| r.fs),
            ("fps.csv", |r: &TrialRow| r.fps),
        ] {
            let mut s = format!("tracker,scenario,subject,trial,{}\n", name.trim_end_matches(".csv"));
            for g in &groups {
                for r in self.rows.iter().filter(|r| r.tracker == g.tracker && r.scenario == g.scenario) {
                    writeln!(s, "{},{},{},{},{:.6}", r.tracker, r.scenario, r.subject, r.trial, get(r)).unwrap();
                }
            }
            write(name, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize, de: f64) -> TrialRow {
        TrialRow {
            subject: "A".into(),
            tracker: TrackerKind::Dtrd,
            scenario: ScenarioName::TwoCross,
            trial,
            de,
            fs: 0.5,
            fps: 30.0,
            initialized: true,
        }
    }

    #[test]
    fn constant_trials_aggregate() {
        let r = MetricsReport {
            rows: vec![row(1, 0.4), row(2, 0.4), row(3, 0.4)],
        };
        let a = r.aggregate(TrackerKind::Dtrd, ScenarioName::TwoCross).unwrap();
        assert_eq!(a.trials, 3);
        assert_eq!(a.de.mean, 0.4);
        assert_eq!(a.de.std, 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let mut rows = vec![row(1, 0.4), row(2, 0.7)];
        rows[1].de = f64::NAN;
        rows[1].initialized = false;
        let r = MetricsReport { rows };
        let bytes = r.to_bytes();
        assert_eq!(&bytes[..4], b"UCFR");
        let back = MetricsReport::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(MetricsReport::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
