use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVectorView, SVD};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, label};

/// Per-agent sample sequences. Agent `k` sees column `t - 1` of its matrix
/// at round `t`, wrapping around when the horizon exceeds its sample count.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentDataset {
    samples: Vec<DMatrix<f64>>,
    outlier_mask: Vec<Vec<bool>>,
}

impl AgentDataset {
    pub fn new(samples: Vec<DMatrix<f64>>, outlier_mask: Vec<Vec<bool>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::contract("dataset needs at least one agent"));
        };
        let dim = first.nrows();
        if samples.len() != outlier_mask.len() {
            return Err(Error::contract("one outlier mask per agent required"));
        }
        for (k, (x, mask)) in samples.iter().zip(&outlier_mask).enumerate() {
            if x.nrows() != dim || x.ncols() == 0 {
                return Err(Error::contract(format!(
                    "agent {k} has a {}x{} sample matrix, expected {dim} rows and at least one column",
                    x.nrows(),
                    x.ncols()
                )));
            }
            if mask.len() != x.ncols() {
                return Err(Error::contract(format!(
                    "agent {k}: mask length differs from sample count"
                )));
            }
        }
        Ok(Self {
            samples,
            outlier_mask,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].nrows()
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.samples.len() {
            return Err(Error::contract(format!(
                "agent {agent} out of range for {} agents",
                self.samples.len()
            )));
        }
        Ok(())
    }

    /// Number of distinct samples held by `agent`.
    pub fn len(&self, agent: usize) -> usize {
        self.samples[agent].ncols()
    }

    /// All of `agent`'s samples as columns.
    pub fn agent_samples(&self, agent: usize) -> Result<&DMatrix<f64>> {
        self.check_agent(agent)?;
        Ok(&self.samples[agent])
    }

    /// `x_{k,t}` for `t >= 1`.
    pub fn sample(&self, agent: usize, t: usize) -> Result<DVectorView<'_, f64>> {
        self.check_agent(agent)?;
        if t == 0 {
            return Err(Error::contract("rounds are numbered from 1"));
        }
        let x = &self.samples[agent];
        Ok(x.column((t - 1) % x.ncols()))
    }

    pub fn outlier_mask(&self, agent: usize) -> &[bool] {
        &self.outlier_mask[agent]
    }

    pub fn outlier_count(&self, agent: usize) -> usize {
        self.outlier_mask[agent].iter().filter(|&&m| m).count()
    }

    /// Copy with every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * factor).collect(),
            outlier_mask: self.outlier_mask.clone(),
        }
    }

    /// Every agent's samples side by side, agent by agent.
    pub fn pooled(&self) -> DMatrix<f64> {
        let total = self.samples.iter().map(|x| x.ncols()).sum();
        let mut out = DMatrix::zeros(self.dim(), total);
        let mut offset = 0;
        for x in &self.samples {
            out.columns_mut(offset, x.ncols()).copy_from(x);
            offset += x.ncols();
        }
        out
    }
}

/// Parameters of the synthetic robust-PCA problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub num_agents: usize,
    pub horizon: usize,
    /// Singular values of the generated matrix are `spectrum^i`.
    pub spectrum: f64,
    pub outliers: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 10,
            p: 5,
            num_agents: 20,
            horizon: 1500,
            spectrum: 0.8,
            outliers: 100,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// The rebuilt `n x (T K)` matrix before its columns were shuffled.
    pub raw: DMatrix<f64>,
    pub dataset: AgentDataset,
}

/// Gaussian data with a prescribed geometric spectrum, shuffled and split so
/// that agent `k` receives column `(t - 1) K + k` at round `t`. Outliers are
/// not added here; see [`inject_outliers`].
pub fn synth_data(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    let SyntheticSpec {
        n,
        p,
        num_agents: k_agents,
        horizon: t_max,
        spectrum,
        ..
    } = *spec;
    if n == 0 || p == 0 || p > n || k_agents == 0 || t_max == 0 {
        return Err(Error::contract(format!(
            "invalid synthetic dimensions {spec:?}"
        )));
    }
    if !(spectrum > 0.0 && spectrum < 1.0) {
        return Err(Error::contract(format!(
            "spectrum ratio must lie in (0, 1), got {spectrum}"
        )));
    }
    let cols = t_max * k_agents;
    if cols < n {
        return Err(Error::contract(format!(
            "{cols} samples cannot carry a rank-{n} spectrum"
        )));
    }
    let mut rng = seed::stream(seed, &[label::DATA]);
    let s = DMatrix::from_fn(n, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let svd = SVD::new(s, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::domain("SVD of the generated sample matrix failed")),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut raw = DMatrix::zeros(n, cols);
    for (i, &j) in order.iter().enumerate() {
        raw += spectrum.powi(i as i32) * u.column(j) * v_t.row(j);
    }

    let mut perm: Vec<usize> = (0..cols).collect();
    perm.shuffle(&mut seed::stream(seed, &[label::SHUFFLE]));
    let samples = (0..k_agents)
        .map(|k| DMatrix::from_fn(n, t_max, |i, t| raw[(i, perm[t * k_agents + k])]))
        .collect();
    let dataset = AgentDataset::new(samples, vec![vec![false; t_max]; k_agents])?;
    Ok(SyntheticData { raw, dataset })
}

/// Replaces `count` uniformly chosen samples of every agent with i.i.d.
/// uniform draws from `[0, 1]^n`.
pub fn inject_outliers(mut dataset: AgentDataset, count: usize, seed: u64) -> Result<AgentDataset> {
    for k in 0..dataset.num_agents() {
        let len = dataset.len(k);
        if count > len {
            return Err(Error::contract(format!(
                "{count} outliers requested but agent {k} holds {len} samples"
            )));
        }
        let mut rng = seed::stream(seed, &[label::OUTLIERS, k as u64]);
        let picked = rand::seq::index::sample(&mut rng, len, count);
        let mut sorted = picked.into_vec();
        sorted.sort_unstable();
        for idx in sorted {
            for v in dataset.samples[k].column_mut(idx).iter_mut() {
                *v = rng.random::<f64>();
            }
            dataset.outlier_mask[k][idx] = true;
        }
    }
    Ok(dataset)
}

/// Reproducibility metadata written next to an exported dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub seed: u64,
    #[serde(flatten)]
    pub spec: SyntheticSpec,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes one CSV row `agent,index,outlier,x0,...` per sample, plus a JSON
/// sidecar with the same stem.
pub fn export_dataset(
    dataset: &AgentDataset,
    spec: &SyntheticSpec,
    seed: u64,
    csv_path: &Path,
) -> Result<()> {
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut out = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    let mut header = vec![
        "agent".to_string(),
        "index".to_string(),
        "outlier".to_string(),
    ];
    header.extend((0..dataset.dim()).map(|i| format!("x{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for k in 0..dataset.num_agents() {
        for (idx, col) in dataset.samples[k].column_iter().enumerate() {
            let mut row = vec![
                k.to_string(),
                idx.to_string(),
                (dataset.outlier_mask[k][idx] as u8).to_string(),
            ];
            row.extend(col.iter().map(|v| format!("{v:?}")));
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::io(csv_path, e))?;

    let json_path = sidecar_path(csv_path);
    let meta = DatasetMetadata { seed, spec: *spec };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    let mut f = File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    writeln!(f, "{text}").map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

/// Reads a dataset written by [`export_dataset`].
pub fn import_dataset(csv_path: &Path) -> Result<(AgentDataset, DatasetMetadata)> {
    let json_path = sidecar_path(csv_path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: DatasetMetadata = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", json_path.display())))?;

    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let bad =
        |line: u64, msg: String| Error::Data(format!("{} line {line}: {msg}", csv_path.display()));
    let mut columns: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut masks: Vec<Vec<bool>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let line = line as u64 + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| bad(line, format!("missing field {i}")))
        };
        let agent: usize = field(0)?.parse().map_err(|e| bad(line, format!("{e}")))?;
        let index: usize = field(1)?.parse().map_err(|e| bad(line, format!("{e}")))?;
        let outlier = match field(2)? {
            "0" => false,
            "1" => true,
            other => return Err(bad(line, format!("outlier flag `{other}`"))),
        };
        let values = (3..record.len())
            .map(|i| {
                field(i)?
                    .parse::<f64>()
                    .map_err(|e| bad(line, format!("{e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if agent == columns.len() {
            columns.push(Vec::new());
            masks.push(Vec::new());
        }
        if agent + 1 != columns.len() || index != columns[agent].len() {
            return Err(bad(line, "rows must be ordered by agent and index".into()));
        }
        columns[agent].push(values);
        masks[agent].push(outlier);
    }
    let samples = columns
        .into_iter()
        .map(|cols| {
            let n = cols.first().map_or(0, Vec::len);
            if cols.iter().any(|c| c.len() != n) {
                return Err(Error::Data(format!("{}: ragged rows", csv_path.display())));
            }
            Ok(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((AgentDataset::new(samples, masks)?, meta))
}
