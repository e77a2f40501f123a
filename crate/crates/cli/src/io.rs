//! CSV ingestion and emission for longitudinal event records.
//!
//! Wire format: `subject_id,time,status,x1,...,xd` with one status-0 row
//! per subject carrying the censoring time. Events are validated against
//! their subject's censoring time and covariate constancy is enforced
//! row by row. All numbers round-trip bitwise through the shortest
//! decimal representation.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use recurode::{Dataset, Subject};

struct PendingSubject {
    order: usize,
    x: Vec<f64>,
    first_line: u64,
    events: Vec<f64>,
    censor: Option<f64>,
}

/// Read and validate a dataset. Subjects keep their order of first
/// appearance; events are sorted within subject.
pub fn ingest(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    {
        let headers = reader.headers()?;
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[0] != "subject_id" || cols[1] != "time" || cols[2] != "status" {
            bail!(
                "invalid header: expected subject_id,time,status,x1,...,xd got {:?}",
                cols.join(",")
            );
        }
        for (i, c) in cols[3..].iter().enumerate() {
            let expect = format!("x{}", i + 1);
            if *c != expect {
                bail!("invalid header: covariate column {} named {c}, expected {expect}", i + 4);
            }
        }
    }
    let n_cov = reader.headers()?.len() - 3;
    let mut subjects: HashMap<String, PendingSubject> = HashMap::new();
    let mut order = 0usize;

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n_cov + 3 {
            bail!("line {line}: expected {} fields, got {}", n_cov + 3, record.len());
        }
        let id = record[0].to_string();
        let time: f64 = record[1]
            .parse()
            .with_context(|| format!("line {line}: non-numeric time `{}` (subject {id})", &record[1]))?;
        let status: u8 = match &record[2] {
            "0" => 0,
            "1" => 1,
            other => bail!("line {line}: status must be 0 or 1, got `{other}` (subject {id})"),
        };
        if !time.is_finite() || time < 0.0 {
            bail!("line {line}: time must be nonnegative and finite, got {time} (subject {id})");
        }
        let mut x = Vec::with_capacity(n_cov);
        for k in 0..n_cov {
            let v: f64 = record[3 + k].parse().with_context(|| {
                format!(
                    "line {line}: non-numeric covariate x{} `{}` (subject {id})",
                    k + 1,
                    &record[3 + k]
                )
            })?;
            x.push(v);
        }
        let entry = subjects.entry(id.clone()).or_insert_with(|| {
            order += 1;
            PendingSubject { order: order - 1, x: x.clone(), first_line: line, events: Vec::new(), censor: None }
        });
        if entry.x != x {
            bail!(
                "line {line}: covariates of subject {id} differ from line {}",
                entry.first_line
            );
        }
        match status {
            0 => {
                if entry.censor.is_some() {
                    bail!("line {line}: subject {id} has more than one censoring row");
                }
                entry.censor = Some(time);
            }
            _ => entry.events.push(time),
        }
    }

    let mut ordered: Vec<(String, PendingSubject)> = subjects.into_iter().collect();
    ordered.sort_by_key(|(_, s)| s.order);
    let mut out = Vec::with_capacity(ordered.len());
    for (id, pending) in ordered {
        let censor = match pending.censor {
            Some(c) => c,
            None => bail!("subject {id}: censoring row (status 0) missing"),
        };
        for &e in &pending.events {
            if e > censor {
                bail!("subject {id}: event at {e} after censor time {censor}");
            }
        }
        out.push(Subject::new(id, pending.x, pending.events, censor)?);
    }
    Ok(Dataset::new(out)?)
}

/// Write a dataset: per subject the sorted event rows then the censor row.
pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut buf = String::from("subject_id,time,status");
    for k in 0..data.n_covariates() {
        buf.push_str(&format!(",x{}", k + 1));
    }
    buf.push('\n');
    for s in data.subjects() {
        let covs: String = s.x.iter().map(|v| format!(",{v}")).collect();
        for &t in &s.event_times {
            buf.push_str(&format!("{},{t},1{covs}\n", s.id));
        }
        buf.push_str(&format!("{},{},0{covs}\n", s.id, s.censor_time));
    }
    write_atomic(path, buf.as_bytes())
}

/// Write via a temp file in the same directory plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}
