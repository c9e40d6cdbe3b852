//! Plain-text parameter dump.
//!
//! ```text
//! dtsc-checkpoint 1
//! config_hash <hex>
//! matrix <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a written
//! checkpoint reloads bit-exactly. Names are `<owner>.<parameter path>`, e.g.
//! `student.backbone.0.weights` or `teacher_ss.projector.hidden.bias`.

use std::fmt::Write as _;

use super::{Parameters, StudentModel, TeacherState};
use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "dtsc-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            entries: Vec::new(),
        }
    }

    pub fn from_models(config_hash: impl Into<String>, student: &StudentModel, teachers: &[&TeacherState]) -> Self {
        let mut ck = Self::new(config_hash);
        ck.add("student", student.named_params());
        for t in teachers {
            let owner = match t.role {
                super::TeacherRole::SampleConsistency => "teacher_sc",
                super::TeacherRole::SampleScatter => "teacher_ss",
            };
            ck.add(owner, t.net.named_params());
            if let Some(p) = &t.projector {
                ck.add(owner, p.named_params_prefixed("projector"));
            }
        }
        ck
    }

    fn add(&mut self, owner: &str, params: Vec<(String, &Matrix)>) {
        for (name, m) in params {
            self.entries.push((format!("{owner}.{name}"), m.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Copies the `student.*` entries into a model with the template's architecture.
    pub fn restore_student(&self, template: &StudentModel) -> Result<StudentModel> {
        let mut model = template.clone();
        for (name, slot) in model.named_params_mut() {
            let key = format!("student.{name}");
            let m = self
                .get(&key)
                .ok_or_else(|| Error::Parse(format!("checkpoint lacks {key}")))?;
            if m.shape() != slot.shape() {
                return Err(shape_err(format!(
                    "{key}: checkpoint {:?} vs model {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m.clone();
        }
        Ok(model)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        for (name, m) in &self.entries {
            let _ = writeln!(s, "matrix {name} {} {}", m.rows(), m.cols());
            for row in m.iter_rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |n: usize, msg: &str| Error::Parse(format!("checkpoint line {}: {msg}", n + 1));

        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(bad(0, "missing header")),
        }
        let config_hash = match lines.next() {
            Some((_, l)) if l.starts_with("config_hash ") => l["config_hash ".len()..].to_string(),
            Some((n, _)) => return Err(bad(n, "expected config_hash")),
            None => return Err(bad(1, "truncated")),
        };
        let mut ck = Self::new(config_hash);
        loop {
            let (n, line) = lines.next().ok_or_else(|| bad(0, "missing end marker"))?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "matrix" {
                return Err(bad(n, "expected `matrix <name> <rows> <cols>`"));
            }
            let rows: usize = parts[2].parse().map_err(|_| bad(n, "bad row count"))?;
            let cols: usize = parts[3].parse().map_err(|_| bad(n, "bad column count"))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rn, row) = lines.next().ok_or_else(|| bad(n, "truncated matrix"))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| bad(rn, "bad number"))?);
                }
                if data.len() - before != cols {
                    return Err(bad(rn, "wrong number of columns"));
                }
            }
            ck.entries
                .push((parts[1].to_string(), Matrix::from_vec(rows, cols, data)?));
        }
        Ok(ck)
    }
}
