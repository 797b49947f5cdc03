//! Thinned chain storage and the framed binary trace format.
//!
//! The on-disk record layout per kept iteration is: labels as unsigned
//! 16-bit integers, beta as 64-bit floats row-major (LCR only), nu and gamma
//! as LSB-first bitfields, and the log posterior as a 64-bit float, all
//! little-endian and length-framed. Classification probabilities and theta
//! draws are not stored; they are re-derivable from the record state (see
//! [`ChainTrace::recompute_class_probs`]).

use crate::error::{Error, Result};
use crate::model::{
    classification_probs, CategoricalDataset, CovariateMatrix, PriorConfig,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const TRACE_MAGIC: [u8; 4] = *b"LCRT";
pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lca,
    Lcr,
}

/// Sampler configuration: full model or one of the selection variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    ItemSel,
    PredSel,
    Both,
}

impl Mode {
    pub fn selects_items(self) -> bool {
        matches!(self, Mode::ItemSel | Mode::Both)
    }

    pub fn selects_predictors(self) -> bool {
        matches!(self, Mode::PredSel | Mode::Both)
    }

    /// Theta is instantiated only in the full model; every selection mode
    /// runs partially collapsed.
    pub fn is_collapsed(self) -> bool {
        !matches!(self, Mode::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::ItemSel => "item_sel",
            Mode::PredSel => "pred_sel",
            Mode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "item_sel" | "item" => Ok(Mode::ItemSel),
            "pred_sel" | "pred" => Ok(Mode::PredSel),
            "both" => Ok(Mode::Both),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected full, item_sel, pred_sel, both)"
            ))),
        }
    }
}

/// Thinned stored samples of all state components plus per-iteration
/// classification probabilities.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    pub model: ModelKind,
    pub mode: Mode,
    pub n_obs: usize,
    pub n_classes: usize,
    pub n_items: usize,
    pub n_predictors: usize,
    pub levels: Vec<usize>,
    pub n_kept: usize,
    /// n_kept x n_obs class labels (0-based).
    pub labels: Vec<u16>,
    /// n_kept x (P+1) x G coefficients, row-major per iteration; empty for LCA.
    pub beta: Vec<f64>,
    /// n_kept x M item inclusion flags.
    pub item_included: Vec<bool>,
    /// n_kept x P predictor inclusion flags; empty for LCA.
    pub pred_included: Vec<bool>,
    /// n_kept log posterior values.
    pub log_post: Vec<f64>,
    /// n_kept x N x G classification probabilities; empty until computed.
    pub class_probs: Vec<f64>,
    /// n_kept x G x total_levels theta draws (full LCR mode only).
    pub theta: Vec<f64>,
}

impl ChainTrace {
    pub fn empty(
        model: ModelKind,
        mode: Mode,
        n_obs: usize,
        n_classes: usize,
        levels: &[usize],
        n_predictors: usize,
    ) -> Self {
        ChainTrace {
            model,
            mode,
            n_obs,
            n_classes,
            n_items: levels.len(),
            n_predictors,
            levels: levels.to_vec(),
            n_kept: 0,
            labels: Vec::new(),
            beta: Vec::new(),
            item_included: Vec::new(),
            pred_included: Vec::new(),
            log_post: Vec::new(),
            class_probs: Vec::new(),
            theta: Vec::new(),
        }
    }

    pub fn coef_count(&self) -> usize {
        self.n_predictors + 1
    }

    pub fn labels_at(&self, t: usize) -> &[u16] {
        &self.labels[t * self.n_obs..(t + 1) * self.n_obs]
    }

    /// (P+1) x G coefficient matrix at kept iteration t.
    pub fn beta_at(&self, t: usize) -> DMatrix<f64> {
        let rows = self.coef_count();
        let cols = self.n_classes;
        let start = t * rows * cols;
        DMatrix::from_fn(rows, cols, |r, c| self.beta[start + r * cols + c])
    }

    pub fn beta_entry(&self, t: usize, coef: usize, class: usize) -> f64 {
        let rows = self.coef_count();
        self.beta[t * rows * self.n_classes + coef * self.n_classes + class]
    }

    pub fn item_included_at(&self, t: usize) -> &[bool] {
        &self.item_included[t * self.n_items..(t + 1) * self.n_items]
    }

    pub fn pred_included_at(&self, t: usize) -> &[bool] {
        &self.pred_included[t * self.n_predictors..(t + 1) * self.n_predictors]
    }

    pub fn class_probs_at(&self, t: usize) -> &[f64] {
        let w = self.n_obs * self.n_classes;
        &self.class_probs[t * w..(t + 1) * w]
    }

    pub fn theta_at(&self, t: usize) -> &[f64] {
        let w: usize = self.levels.iter().sum::<usize>() * self.n_classes;
        &self.theta[t * w..(t + 1) * w]
    }

    /// Fill `class_probs` from the stored per-iteration states. This is the
    /// conditional classification probability p(z_i = g | Z_{-i}, state) of
    /// the partially collapsed model, computable in every mode.
    pub fn recompute_class_probs(
        &mut self,
        data: &CategoricalDataset,
        covariates: Option<&CovariateMatrix>,
        priors: &PriorConfig,
    ) -> Result<()> {
        let mut probs = Vec::with_capacity(self.n_kept * self.n_obs * self.n_classes);
        for t in 0..self.n_kept {
            let labels: Vec<usize> = self.labels_at(t).iter().map(|&z| z as usize).collect();
            let beta = match self.model {
                ModelKind::Lca => None,
                ModelKind::Lcr => Some(self.beta_at(t)),
            };
            let pred_inc: Vec<bool> = match self.model {
                ModelKind::Lca => vec![],
                ModelKind::Lcr => self.pred_included_at(t).to_vec(),
            };
            let item_inc = self.item_included_at(t).to_vec();
            let w = classification_probs(
                data,
                covariates,
                &labels,
                beta.as_ref(),
                &pred_inc,
                &item_inc,
                priors,
                self.n_classes,
            )?;
            probs.extend_from_slice(&w);
        }
        self.class_probs = probs;
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&[match self.model {
            ModelKind::Lca => 0u8,
            ModelKind::Lcr => 1u8,
        }])?;
        w.write_all(&[match self.mode {
            Mode::Full => 0u8,
            Mode::ItemSel => 1u8,
            Mode::PredSel => 2u8,
            Mode::Both => 3u8,
        }])?;
        w.write_all(&(self.n_obs as u32).to_le_bytes())?;
        w.write_all(&(self.n_classes as u16).to_le_bytes())?;
        w.write_all(&(self.n_items as u16).to_le_bytes())?;
        w.write_all(&(self.n_predictors as u16).to_le_bytes())?;
        w.write_all(&(self.n_kept as u32).to_le_bytes())?;
        for &k in &self.levels {
            w.write_all(&(k as u16).to_le_bytes())?;
        }
        let is_lcr = self.model == ModelKind::Lcr;
        let beta_len = if is_lcr {
            self.coef_count() * self.n_classes
        } else {
            0
        };
        let nu_bytes = self.n_items.div_ceil(8);
        let gamma_bytes = if is_lcr {
            self.n_predictors.div_ceil(8)
        } else {
            0
        };
        let record_len = (2 * self.n_obs + 8 * beta_len + nu_bytes + gamma_bytes + 8) as u32;
        for t in 0..self.n_kept {
            w.write_all(&record_len.to_le_bytes())?;
            for &z in self.labels_at(t) {
                w.write_all(&z.to_le_bytes())?;
            }
            if is_lcr {
                let start = t * beta_len;
                for &b in &self.beta[start..start + beta_len] {
                    w.write_all(&b.to_le_bytes())?;
                }
            }
            write_bitfield(&mut w, self.item_included_at(t))?;
            if is_lcr {
                write_bitfield(&mut w, self.pred_included_at(t))?;
            }
            w.write_all(&self.log_post[t].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != TRACE_MAGIC {
            return Err(Error::TraceFormat("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TRACE_VERSION {
            return Err(Error::TraceVersion(version));
        }
        let model = match read_u8(&mut r)? {
            0 => ModelKind::Lca,
            1 => ModelKind::Lcr,
            other => return Err(Error::TraceFormat(format!("bad model byte {other}"))),
        };
        let mode = match read_u8(&mut r)? {
            0 => Mode::Full,
            1 => Mode::ItemSel,
            2 => Mode::PredSel,
            3 => Mode::Both,
            other => return Err(Error::TraceFormat(format!("bad mode byte {other}"))),
        };
        let n_obs = read_u32(&mut r)? as usize;
        let n_classes = read_u16(&mut r)? as usize;
        let n_items = read_u16(&mut r)? as usize;
        let n_predictors = read_u16(&mut r)? as usize;
        let n_kept = read_u32(&mut r)? as usize;
        let mut levels = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            levels.push(read_u16(&mut r)? as usize);
        }
        let is_lcr = model == ModelKind::Lcr;
        let beta_len = if is_lcr { (n_predictors + 1) * n_classes } else { 0 };
        let nu_bytes = n_items.div_ceil(8);
        let gamma_bytes = if is_lcr { n_predictors.div_ceil(8) } else { 0 };
        let expect_len = (2 * n_obs + 8 * beta_len + nu_bytes + gamma_bytes + 8) as u32;

        let mut trace = ChainTrace::empty(model, mode, n_obs, n_classes, &levels, n_predictors);
        trace.n_kept = n_kept;
        trace.labels.reserve(n_kept * n_obs);
        trace.beta.reserve(n_kept * beta_len);
        for _ in 0..n_kept {
            let len = read_u32(&mut r)?;
            if len != expect_len {
                return Err(Error::TraceFormat(format!(
                    "record length {len} does not match header-implied {expect_len}"
                )));
            }
            for _ in 0..n_obs {
                trace.labels.push(read_u16(&mut r)?);
            }
            for _ in 0..beta_len {
                trace.beta.push(read_f64(&mut r)?);
            }
            read_bitfield(&mut r, n_items, &mut trace.item_included)?;
            if is_lcr {
                read_bitfield(&mut r, n_predictors, &mut trace.pred_included)?;
            }
            trace.log_post.push(read_f64(&mut r)?);
        }
        Ok(trace)
    }
}

fn write_bitfield<W: Write>(w: &mut W, flags: &[bool]) -> Result<()> {
    let mut buf = vec![0u8; flags.len().div_ceil(8)];
    for (i, &f) in flags.iter().enumerate() {
        if f {
            buf[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_bitfield<R: Read>(r: &mut R, count: usize, out: &mut Vec<bool>) -> Result<()> {
    let mut buf = vec![0u8; count.div_ceil(8)];
    r.read_exact(&mut buf)?;
    for i in 0..count {
        out.push(buf[i / 8] & (1 << (i % 8)) != 0);
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
