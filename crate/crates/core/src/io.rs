//! JSON containers for systems, Gramians and reduced models, and CSV
//! trajectory export.
//!
//! Matrices are row-major nested arrays. Floats are written in shortest
//! round-trip form, so reading a document back reproduces every value.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MorError, Result};
use crate::fbm::HurstParam;
use crate::gramians::{GramianSet, Horizon, Provenance};
use crate::integrate::Trajectory;
use crate::model::{Interpretation, StochasticLinearSystem};
use crate::reduce::{Recipe, ReducedOrderModel};

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &Rows, nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(MorError::Format(format!("{name} must be {nrows} x {ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Reduction metadata attached to an exported ROM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeBlock {
    pub method: Recipe,
    pub r: usize,
    pub sigma: Vec<f64>,
    pub truncated_tail_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub v: usize,
    #[serde(rename = "H")]
    pub hurst: f64,
    pub interpretation: Interpretation,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "N")]
    pub noise: Vec<Rows>,
    #[serde(rename = "X0")]
    pub x0: Rows,
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<RecipeBlock>,
}

impl SystemDocument {
    pub fn from_system(sys: &StochasticLinearSystem) -> Self {
        Self {
            n: sys.order(),
            m: sys.inputs(),
            p: sys.outputs(),
            q: sys.drivers(),
            v: sys.z().len(),
            hurst: sys.hurst().value(),
            interpretation: sys.interpretation(),
            a: to_rows(sys.a()),
            b: to_rows(sys.b()),
            c: to_rows(sys.c()),
            noise: sys.noise().iter().map(to_rows).collect(),
            x0: to_rows(sys.x0()),
            z: sys.z().iter().cloned().collect(),
            recipe: None,
        }
    }

    pub fn from_rom(rom: &ReducedOrderModel) -> Self {
        let mut doc = Self::from_system(&rom.sys_r);
        doc.recipe = Some(RecipeBlock {
            method: rom.recipe,
            r: rom.r,
            sigma: rom
                .sigma
                .as_ref()
                .map(|s| s.iter().cloned().collect())
                .unwrap_or_default(),
            truncated_tail_sum: rom.truncated_tail_sum(),
        });
        doc
    }

    pub fn to_system(&self) -> Result<StochasticLinearSystem> {
        if self.noise.len() != self.q {
            return Err(MorError::Format(format!(
                "expected {} noise matrices, found {}",
                self.q,
                self.noise.len()
            )));
        }
        if self.z.len() != self.v {
            return Err(MorError::Format(format!("z must have {} entries", self.v)));
        }
        let noise = self
            .noise
            .iter()
            .enumerate()
            .map(|(i, ni)| from_rows(ni, self.n, self.n, &format!("N[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        StochasticLinearSystem::new(
            from_rows(&self.a, self.n, self.n, "A")?,
            from_rows(&self.b, self.n, self.m, "B")?,
            from_rows(&self.c, self.p, self.n, "C")?,
            noise,
            from_rows(&self.x0, self.n, self.v, "X0")?,
            DVector::from_vec(self.z.clone()),
            HurstParam::new(self.hurst)?,
            self.interpretation,
        )
    }
}

pub fn system_to_json(sys: &StochasticLinearSystem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SystemDocument::from_system(sys))?)
}

pub fn system_from_json(text: &str) -> Result<StochasticLinearSystem> {
    let doc: SystemDocument = serde_json::from_str(text)?;
    doc.to_system()
}

pub fn rom_to_json(rom: &ReducedOrderModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SystemDocument::from_rom(rom))?)
}

pub fn read_system(path: &Path) -> Result<StochasticLinearSystem> {
    let text = fs::read_to_string(path)
        .map_err(|e| MorError::Format(format!("cannot read system file {}: {e}", path.display())))?;
    system_from_json(&text).map_err(|e| match e {
        MorError::Json(j) => MorError::Format(format!("{}: {j}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramianDocument {
    pub n: usize,
    pub horizon: Horizon,
    pub provenance: Provenance,
    #[serde(rename = "P_u")]
    pub p_u: Rows,
    #[serde(rename = "P_x0")]
    pub p_x0: Rows,
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
}

impl GramianDocument {
    pub fn from_set(g: &GramianSet) -> Self {
        Self {
            n: g.order(),
            horizon: g.horizon,
            provenance: g.provenance,
            p_u: to_rows(&g.p_u),
            p_x0: to_rows(&g.p_x0),
            p: to_rows(&g.p),
            q: g.q.as_ref().map(to_rows),
        }
    }

    pub fn to_set(&self) -> Result<GramianSet> {
        let n = self.n;
        let set = GramianSet {
            p_u: from_rows(&self.p_u, n, n, "P_u")?,
            p_x0: from_rows(&self.p_x0, n, n, "P_x0")?,
            p: from_rows(&self.p, n, n, "P")?,
            q: self.q.as_ref().map(|q| from_rows(q, n, n, "Q")).transpose()?,
            horizon: self.horizon,
            provenance: self.provenance,
        };
        Ok(set)
    }
}

pub fn gramians_to_json(g: &GramianSet) -> Result<String> {
    Ok(serde_json::to_string_pretty(&GramianDocument::from_set(g))?)
}

pub fn gramians_from_json(text: &str) -> Result<GramianSet> {
    let doc: GramianDocument = serde_json::from_str(text)?;
    doc.to_set()
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `# ` prefixed comment lines.
pub fn write_comment<W: Write>(out: &mut W, text: &str) -> Result<()> {
    for line in text.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Header `t,x_1,...,x_n[,y_1,...,y_p]` and one row per grid point.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory, with_outputs: bool) -> Result<()> {
    let n = traj.states.nrows();
    let p = traj.outputs.nrows();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    if with_outputs {
        header.extend((1..=p).map(|i| format!("y_{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for k in 0..traj.states.ncols() {
        let mut row = vec![fmt_float(traj.grid.time(k))];
        row.extend(traj.states.column(k).iter().map(|&x| fmt_float(x)));
        if with_outputs {
            row.extend(traj.outputs.column(k).iter().map(|&y| fmt_float(y)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
