//! PSPLIB single-mode `.sm` instance parser (J30/J60/J120 layout).
//!
//! Jobs (including the dummy source and sink) become activities; precedence
//! edges come from the successor lists; per-resource requirements are
//! normalized to [0, 1] by renewable availability. Duration targets are the
//! given durations (project-level values follow from CPM over them) and cost
//! targets are requirement x duration at a unit rate per resource.
//! Multi-mode instances are rejected.

use super::IngestError;
use crate::graph::{Edge, ProjectGraph, Relation};
use crate::instance::{InstanceMeta, ProjectInstance};

const COST_RATE: f64 = 1.0;

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    /// 1-based number of the line at the cursor (or one past the end).
    fn line_no(&self) -> usize {
        self.pos + 1
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        if self.pos < self.lines.len() {
            let out = (self.pos + 1, self.lines[self.pos]);
            self.pos += 1;
            Some(out)
        } else {
            None
        }
    }

    /// Advance to the first line containing `needle`; returns its number.
    fn seek(&mut self, needle: &str, expected: &str) -> Result<usize, IngestError> {
        while let Some((no, line)) = self.next_line() {
            if line.contains(needle) {
                return Ok(no);
            }
        }
        Err(IngestError::ParseError {
            line: self.line_no(),
            expected: expected.to_string(),
        })
    }
}

fn ints(line: &str) -> Vec<i64> {
    line.split_whitespace()
        .filter_map(|tok| tok.parse::<i64>().ok())
        .collect()
}

fn header_count(cursor: &mut Cursor, needle: &str, expected: &str) -> Result<usize, IngestError> {
    let no = cursor.seek(needle, expected)?;
    let line = cursor.lines[no - 1];
    let after = line.split(':').nth(1).ok_or(IngestError::ParseError {
        line: no,
        expected: format!("{expected} value after ':'"),
    })?;
    let values = ints(after);
    values
        .first()
        .map(|&v| v as usize)
        .ok_or(IngestError::ParseError {
            line: no,
            expected: format!("integer {expected}"),
        })
}

pub fn parse_psplib(text: &str) -> Result<ProjectInstance, IngestError> {
    let mut cursor = Cursor::new(text);
    let n_jobs = header_count(&mut cursor, "jobs (incl.", "jobs count header")?;
    let n_res = header_count(&mut cursor, "- renewable", "renewable resource count header")?;
    if n_jobs < 2 {
        return Err(IngestError::ParseError {
            line: cursor.line_no(),
            expected: "at least 2 jobs (dummy source and sink)".into(),
        });
    }

    // PRECEDENCE RELATIONS: jobnr. #modes #successors successor list.
    cursor.seek("PRECEDENCE RELATIONS", "PRECEDENCE RELATIONS section")?;
    cursor.seek("jobnr.", "precedence table header")?;
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n_jobs + 1];
    for job in 1..=n_jobs {
        let (no, line) = cursor.next_line().ok_or(IngestError::ParseError {
            line: cursor.line_no(),
            expected: format!("precedence row for job {job}"),
        })?;
        let v = ints(line);
        if v.len() < 3 {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("precedence row for job {job}"),
            });
        }
        let (jobnr, modes, n_succ) = (v[0] as usize, v[1], v[2] as usize);
        if jobnr != job {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("row for job {job}, found job {jobnr}"),
            });
        }
        if modes != 1 {
            return Err(IngestError::UnsupportedFormat(format!(
                "job {job} declares {modes} modes; only single-mode .sm instances are \
                 supported (split multi-mode files into one instance per mode first)"
            )));
        }
        if v.len() != 3 + n_succ {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("{n_succ} successors for job {job}"),
            });
        }
        for &s in &v[3..] {
            let s = s as usize;
            if s == 0 || s > n_jobs {
                return Err(IngestError::ParseError {
                    line: no,
                    expected: format!("successor id in 1..={n_jobs}"),
                });
            }
            successors[job].push(s);
        }
    }

    // REQUESTS/DURATIONS: jobnr. mode duration R1.. Rk.
    cursor.seek("REQUESTS/DURATIONS", "REQUESTS/DURATIONS section")?;
    cursor.seek("jobnr", "requests table header")?;
    let mut durations = vec![0.0f64; n_jobs + 1];
    let mut requests = vec![vec![0.0f64; n_res]; n_jobs + 1];
    let mut seen = 0usize;
    while seen < n_jobs {
        let (no, line) = cursor.next_line().ok_or(IngestError::ParseError {
            line: cursor.line_no(),
            expected: format!("request row for job {}", seen + 1),
        })?;
        if line.trim_start().starts_with('-') || line.trim().is_empty() {
            continue;
        }
        let v = ints(line);
        if v.len() != 3 + n_res {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("jobnr, mode, duration and {n_res} resource requests"),
            });
        }
        let job = v[0] as usize;
        if job == 0 || job > n_jobs {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("job id in 1..={n_jobs}"),
            });
        }
        if v[1] != 1 {
            return Err(IngestError::UnsupportedFormat(format!(
                "job {job} uses mode {}; only single-mode instances are supported",
                v[1]
            )));
        }
        durations[job] = v[2] as f64;
        for k in 0..n_res {
            requests[job][k] = v[3 + k] as f64;
        }
        seen += 1;
    }

    // RESOURCEAVAILABILITIES: one row of capacities. The section header row
    // names the resources ("R 1  R 2 ..."), so only a line made entirely of
    // integers counts as the availability row.
    cursor.seek("RESOURCEAVAILABILITIES", "RESOURCEAVAILABILITIES section")?;
    let availabilities = loop {
        let (no, line) = cursor.next_line().ok_or(IngestError::ParseError {
            line: cursor.line_no(),
            expected: "resource availability row".into(),
        })?;
        let all_ints = !line.trim().is_empty()
            && line
                .split_whitespace()
                .all(|tok| tok.parse::<i64>().is_ok());
        if all_ints {
            let v = ints(line);
            if v.len() != n_res {
                return Err(IngestError::ParseError {
                    line: no,
                    expected: format!("{n_res} availability values"),
                });
            }
            if v.iter().any(|&a| a <= 0) {
                return Err(IngestError::ParseError {
                    line: no,
                    expected: "positive availabilities".into(),
                });
            }
            break v;
        }
        if line.contains("****") {
            return Err(IngestError::ParseError {
                line: no,
                expected: format!("{n_res} availability values"),
            });
        }
    };

    // Assemble instance. Job ids are zero-padded so id order == job order.
    let width = n_jobs.to_string().len();
    let act_ids: Vec<String> = (1..=n_jobs).map(|j| format!("j{j:0width$}")).collect();
    let res_ids: Vec<String> = (0..n_res).map(|k| format!("R{}", k + 1)).collect();

    let mut edges = Vec::new();
    for job in 1..=n_jobs {
        for &s in &successors[job] {
            edges.push(Edge::new(
                act_ids[job - 1].clone(),
                act_ids[s - 1].clone(),
                Relation::Precedence,
            ));
        }
    }
    let mut demands = vec![vec![0.0f64; n_res]; n_jobs];
    for job in 1..=n_jobs {
        for k in 0..n_res {
            let norm = requests[job][k] / availabilities[k] as f64;
            demands[job - 1][k] = norm;
            if norm > 0.0 {
                edges.push(
                    Edge::new(
                        act_ids[job - 1].clone(),
                        res_ids[k].clone(),
                        Relation::Assignment,
                    )
                    .with_features(vec![norm]),
                );
            }
        }
    }
    // Resources collaborate when they serve at least one common activity.
    for k in 0..n_res {
        for l in (k + 1)..n_res {
            let shared = (1..=n_jobs).any(|j| requests[j][k] > 0.0 && requests[j][l] > 0.0);
            if shared {
                edges.push(Edge::new(
                    res_ids[k].clone(),
                    res_ids[l].clone(),
                    Relation::Collaboration,
                ));
            }
        }
    }

    let graph = ProjectGraph::new(act_ids, res_ids, edges)?;
    // Reject cyclic precedence here so downstream CPM cannot fail.
    graph.topo_order()?;

    let t: Vec<f64> = (1..=n_jobs).map(|j| durations[j]).collect();
    let c: Vec<f64> = (1..=n_jobs)
        .map(|j| {
            (0..n_res)
                .map(|k| requests[j][k] / availabilities[k] as f64 * durations[j] * COST_RATE)
                .sum()
        })
        .collect();

    let mut instance = ProjectInstance::bare(
        graph,
        InstanceMeta {
            name: format!("psplib-{n_jobs}j"),
            seed: 0,
            source: "psplib".into(),
        },
    );
    instance.demands = demands;
    instance.t_est = t.clone();
    instance.c_est = c.clone();
    instance.t_true = Some(t);
    instance.c_true = Some(c);
    instance.resource_feature_names = vec!["availability".into()];
    instance.resource_features = availabilities
        .iter()
        .map(|&a| vec![a as f64])
        .collect();
    Ok(instance)
}
