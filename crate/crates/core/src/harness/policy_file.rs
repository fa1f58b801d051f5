//! Single-file policy format.
//!
//! ```text
//! KNAF-POLICY 1\n
//! {JSON header}\n
//! <payload: little-endian f64, centers (N×p) then stacked weights (N×(2+q+q²))>
//! ```
//!
//! The header names every dimension and the column layout; floats in the
//! header are written with round-trip precision, the payload is raw bits.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knaf::NafPolicy;
use crate::rkhs::{KernelParams, SparseKernelModel};

pub const MAGIC: &str = "KNAF-POLICY";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub map: String,
    pub steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    state_dim: usize,
    action_dim: usize,
    order: usize,
    bandwidth: Vec<f64>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    l0: f64,
    columns: Vec<String>,
    payload: String,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFile {
    pub policy: NafPolicy,
    pub provenance: Provenance,
}

fn column_names(q: usize) -> Vec<String> {
    let mut cols = vec!["V".to_string()];
    cols.extend((0..q).map(|i| format!("pi[{i}]")));
    for i in 0..q {
        for k in 0..q {
            cols.push(format!("L[{i},{k}]"));
        }
    }
    cols.push("rho".into());
    cols
}

impl PolicyFile {
    pub fn new(policy: NafPolicy, provenance: Provenance) -> Self {
        Self { policy, provenance }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.policy;
        let header = Header {
            format_version: FORMAT_VERSION,
            state_dim: p.state_dim(),
            action_dim: p.action_dim(),
            order: p.order(),
            bandwidth: p.kernel().bandwidth().to_vec(),
            action_low: p.action_low().to_vec(),
            action_high: p.action_high().to_vec(),
            l0: p.l0(),
            columns: column_names(p.action_dim()),
            payload: "f64-le centers then weights, row-major".into(),
            provenance: self.provenance.clone(),
        };
        let json =
            serde_json::to_string(&header).map_err(|e| Error::PolicyFormat(e.to_string()))?;
        writeln!(w, "{MAGIC} {FORMAT_VERSION}")?;
        writeln!(w, "{json}")?;
        let m = p.stacked();
        let mut buf = Vec::with_capacity(8 * (m.centers_flat().len() + m.weights_flat().len()));
        for v in m.centers_flat().iter().chain(m.weights_flat()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to memory cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let magic = line.trim_end();
        match magic.split_once(' ') {
            Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => {
                return Err(Error::PolicyFormat(format!(
                    "unsupported format version {v}"
                )))
            }
            _ => return Err(Error::PolicyFormat("missing KNAF-POLICY magic line".into())),
        }
        line.clear();
        r.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::PolicyFormat(format!("header: {e}")))?;
        if h.columns != column_names(h.action_dim) {
            return Err(Error::PolicyFormat("unexpected column layout".into()));
        }
        let kernel = KernelParams::new(h.bandwidth.clone())?;
        if kernel.dim() != h.state_dim {
            return Err(Error::PolicyFormat(
                "bandwidth length differs from state_dim".into(),
            ));
        }
        let width = column_names(h.action_dim).len();
        let n_c = h.order * h.state_dim;
        let n_w = h.order * width;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != 8 * (n_c + n_w) {
            return Err(Error::PolicyFormat(format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                8 * (n_c + n_w)
            )));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let model = SparseKernelModel::from_flat(
            kernel,
            width,
            vals[..n_c].to_vec(),
            vals[n_c..].to_vec(),
        )?;
        let policy = NafPolicy::from_stacked(model, h.action_low, h.action_high, h.l0)?;
        Ok(Self {
            policy,
            provenance: h.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
