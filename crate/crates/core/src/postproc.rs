//! Posterior summaries of the stored partitions: the co-clustering
//! similarity matrix, least-squares (Dahl) and minimum-HM selection, the
//! heterogeneity measure and weighted cluster profiles.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Column, Dataset, Schema, VariableKind};

/// Relabel by first appearance so equal partitions have equal label vectors.
pub fn canonical_labels(labels: &[u32]) -> Vec<u32> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len() as u32;
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Number of distinct labels.
pub fn cluster_count(labels: &[u32]) -> usize {
    let mut seen: Vec<u32> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Symmetric `n × n` matrix of co-clustering frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Little-endian `u64` dimension followed by the row-major `f64` entries.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        let n = u64::from_le_bytes(head) as usize;
        let mut data = Vec::with_capacity(n * n);
        let mut buf = [0u8; 8];
        for _ in 0..n * n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Ok(SimilarityMatrix { n, data })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 8);
        for i in 0..self.n {
            for (j, x) in self.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{x}");
            }
            s.push('\n');
        }
        s
    }
}

/// Streaming accumulator of co-clustering counts.
#[derive(Debug, Clone)]
pub struct SimilarityAccumulator {
    n: usize,
    counts: Vec<u32>,
    partitions: usize,
}

impl SimilarityAccumulator {
    pub fn new(n: usize) -> Self {
        SimilarityAccumulator {
            n,
            counts: vec![0; n * (n + 1) / 2],
            partitions: 0,
        }
    }

    pub fn add(&mut self, labels: &[u32]) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::Dimension(format!("partition of {} records, expected {}", labels.len(), self.n)));
        }
        let mut k = 0;
        for i in 0..self.n {
            let li = labels[i];
            for &lj in &labels[i..] {
                self.counts[k] += (li == lj) as u32;
                k += 1;
            }
        }
        self.partitions += 1;
        Ok(())
    }

    /// Merge another accumulator over the same records.
    pub fn merge(&mut self, other: &SimilarityAccumulator) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Dimension("accumulators over different records".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.partitions += other.partitions;
        Ok(())
    }

    pub fn finish(&self) -> Result<SimilarityMatrix> {
        if self.partitions == 0 {
            return Err(Error::Dimension("no partitions to average".into()));
        }
        let n = self.n;
        let total = self.partitions as f64;
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = self.counts[k] as f64 / total;
                data[i * n + j] = v;
                data[j * n + i] = v;
                k += 1;
            }
        }
        Ok(SimilarityMatrix { n, data })
    }
}

/// Fraction of partitions placing each pair of records together.
pub fn similarity(partitions: &[Vec<u32>]) -> Result<SimilarityMatrix> {
    let n = partitions
        .first()
        .ok_or_else(|| Error::Dimension("no partitions to average".into()))?
        .len();
    let mut acc = SimilarityAccumulator::new(n);
    for p in partitions {
        acc.add(p)?;
    }
    acc.finish()
}

/// `Σ_ij (A_ij − sim_ij)²` for the adjacency matrix `A` of `labels`.
pub fn squared_distance(labels: &[u32], sim: &SimilarityMatrix) -> f64 {
    let n = sim.n();
    let mut upper = 0.0;
    let mut diag = 0.0;
    for i in 0..n {
        let row = sim.row(i);
        let d = 1.0 - row[i];
        diag += d * d;
        for j in i + 1..n {
            let a = (labels[i] == labels[j]) as u8 as f64;
            let d = a - row[j];
            upper += d * d;
        }
    }
    diag + 2.0 * upper
}

/// A stored partition chosen as the point estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position among the stored partitions.
    pub index: usize,
    pub labels: Vec<u32>,
    pub r: usize,
    /// The minimised criterion.
    pub score: f64,
}

fn select_min(partitions: &[Vec<u32>], score: impl Fn(&[u32]) -> f64) -> Result<Selection> {
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in partitions.iter().enumerate() {
        let s = score(p);
        // strict comparison keeps the earliest on ties
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((k, s));
        }
    }
    let (index, score) = best.ok_or_else(|| Error::Dimension("no partitions to select from".into()))?;
    let labels = canonical_labels(&partitions[index]);
    Ok(Selection {
        index,
        r: cluster_count(&labels),
        labels,
        score,
    })
}

/// Stored partition closest to `sim` in squared distance.
pub fn dahl_select(partitions: &[Vec<u32>], sim: &SimilarityMatrix) -> Result<Selection> {
    if partitions.iter().any(|p| p.len() != sim.n()) {
        return Err(Error::Dimension("partition and similarity sizes differ".into()));
    }
    select_min(partitions, |p| squared_distance(p, sim))
}

/// Stored partition with the smallest heterogeneity measure.
pub fn min_hm_select(partitions: &[Vec<u32>], expanded: &Expanded, weights: &[f64]) -> Result<Selection> {
    select_min(partitions, |p| hm_measure(p, expanded, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    #[default]
    Dahl,
    MinHm,
}

/// Observed variables recoded for the heterogeneity measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub n: usize,
    pub names: Vec<String>,
    /// Row-major `n × p*`.
    pub data: Vec<f64>,
}

impl Expanded {
    pub fn p_star(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p_star();
        &self.data[i * p..(i + 1) * p]
    }
}

/// Numeric variables (continuous, and ordinal with more than two levels)
/// are standardised with the unweighted mean and sample standard deviation;
/// two-level variables pass through as 0/1; nominal variables with more
/// than two categories become one indicator per category. Columns follow
/// the input order of the variables.
pub fn expand_variables(dataset: &Dataset, schema: &Schema) -> Expanded {
    let n = dataset.n();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for v in schema.input_order() {
        let layout = &schema.variables()[v];
        let name = &layout.spec.name;
        let levels = layout.spec.levels();
        match (&layout.spec.kind, dataset.column(v)) {
            (VariableKind::Nominal { categories }, Column::Categorical(ys)) if categories.len() > 2 => {
                for (l, cat) in categories.iter().enumerate() {
                    names.push(format!("{name}={cat}"));
                    cols.push(ys.iter().map(|&y| (y == l) as u8 as f64).collect());
                }
            }
            (_, col) if levels == Some(2) => {
                names.push(name.clone());
                cols.push((0..n).map(|i| col.value(i)).collect());
            }
            (_, col) => {
                let xs: Vec<f64> = (0..n).map(|i| col.value(i)).collect();
                let mean = xs.iter().sum::<f64>() / n as f64;
                let var = if n > 1 {
                    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                names.push(name.clone());
                if var > 0.0 {
                    let sd = var.sqrt();
                    cols.push(xs.iter().map(|x| (x - mean) / sd).collect());
                } else {
                    log::warn!("variable {name} is constant; it contributes zeros to HM");
                    cols.push(vec![0.0; n]);
                }
            }
        }
    }
    let p = cols.len();
    let mut data = vec![0.0; n * p];
    for (j, c) in cols.iter().enumerate() {
        for (i, x) in c.iter().enumerate() {
            data[i * p + j] = *x;
        }
    }
    Expanded { n, names, data }
}

/// `HM = Σ_k n_k Σ_j S²_kj` with `S²_kj` the within-cluster variance of
/// column `j` under the cluster-normalised design weights.
pub fn hm_measure(labels: &[u32], expanded: &Expanded, weights: &[f64]) -> f64 {
    let p = expanded.p_star();
    let canon = canonical_labels(labels);
    let r = cluster_count(&canon);
    // each cluster is shifted by its first member, so identical members
    // (singletons in particular) give exactly zero
    let mut size = vec![0usize; r];
    let mut anchor = vec![usize::MAX; r];
    let mut wsum = vec![0.0; r];
    let mut mean = vec![0.0; r * p];
    for (i, &k) in canon.iter().enumerate() {
        let k = k as usize;
        if anchor[k] == usize::MAX {
            anchor[k] = i;
        }
        size[k] += 1;
        wsum[k] += weights[i];
        let origin = expanded.row(anchor[k]);
        for (j, y) in expanded.row(i).iter().enumerate() {
            mean[k * p + j] += weights[i] * (y - origin[j]);
        }
    }
    for k in 0..r {
        mean[k * p..(k + 1) * p].iter_mut().for_each(|m| *m /= wsum[k]);
    }
    // centred second pass; equals the raw-moment form of S² exactly in
    // real arithmetic and avoids cancellation
    let mut within = vec![0.0; r];
    for (i, &k) in canon.iter().enumerate() {
        let k = k as usize;
        let w = weights[i] / wsum[k];
        let origin = expanded.row(anchor[k]);
        for (j, y) in expanded.row(i).iter().enumerate() {
            let d = (y - origin[j]) - mean[k * p + j];
            within[k] += w * d * d;
        }
    }
    (0..r).map(|k| size[k] as f64 * within[k]).sum()
}

/// Weighted profile table: one row per cluster plus a population row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// Value column headers (after `group`, `records`, `weight`, `share_pct`).
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// Cluster label, or `population`.
    pub group: String,
    pub records: usize,
    pub weight: f64,
    /// Weighted size as a percentage of the total weight.
    pub share_pct: f64,
    pub values: Vec<f64>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,records,weight,share_pct");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{},{}", r.group, r.records, r.weight, r.share_pct);
            for v in &r.values {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Weighted means of continuous and ordinal variables (ordinal levels as
/// their 0-based index, so binaries give the share of level 1) and weighted
/// category shares of nominal variables, per cluster and overall.
pub fn cluster_summary(labels: &[u32], dataset: &Dataset, schema: &Schema) -> Result<SummaryTable> {
    let n = dataset.n();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} records", labels.len())));
    }
    let canon = canonical_labels(labels);
    let r = cluster_count(&canon);
    let weights = dataset.weights();

    // one accessor per output column
    let mut columns = Vec::new();
    let mut extract: Vec<Box<dyn Fn(usize) -> f64 + '_>> = Vec::new();
    for v in schema.input_order() {
        let layout = &schema.variables()[v];
        let col = dataset.column(v);
        match &layout.spec.kind {
            VariableKind::Nominal { categories } => {
                for (l, cat) in categories.iter().enumerate() {
                    columns.push(format!("{}={cat}", layout.spec.name));
                    extract.push(Box::new(move |i| (col.value(i) as usize == l) as u8 as f64));
                }
            }
            _ => {
                columns.push(layout.spec.name.clone());
                extract.push(Box::new(move |i| col.value(i)));
            }
        }
    }

    let total_w: f64 = weights.iter().sum();
    let mut group_w = vec![0.0; r + 1];
    let mut records = vec![0usize; r + 1];
    let mut sums = vec![vec![0.0; columns.len()]; r + 1];
    for i in 0..n {
        let w = weights[i];
        for g in [canon[i] as usize, r] {
            group_w[g] += w;
            records[g] += 1;
            for (c, f) in extract.iter().enumerate() {
                sums[g][c] += w * f(i);
            }
        }
    }
    let rows = (0..=r)
        .map(|g| SummaryRow {
            group: if g == r { "population".into() } else { g.to_string() },
            records: records[g],
            weight: group_w[g],
            share_pct: 100.0 * group_w[g] / total_w,
            values: sums[g].iter().map(|s| s / group_w[g]).collect(),
        })
        .collect();
    Ok(SummaryTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{build_schema, VariableSpec};
    use proptest::prelude::*;

    #[test]
    fn identical_partitions_give_their_adjacency() {
        let p = vec![0, 0, 1, 2, 1];
        let sim = similarity(&[p.clone(), p.clone()]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(sim.get(i, j), (p[i] == p[j]) as u8 as f64);
            }
        }
        let sel = dahl_select(&[p.clone(), p.clone()], &sim).unwrap();
        assert_eq!(sel.index, 0);
        assert_eq!(sel.score, 0.0);
    }

    #[test]
    fn together_and_apart_average_to_half() {
        let sim = similarity(&[vec![0, 0, 0], vec![0, 1, 2]]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(sim.get(i, j), if i == j { 1.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn similarity_rejects_mismatched_lengths() {
        assert!(similarity(&[vec![0, 1], vec![0, 1, 2]]).is_err());
        assert!(similarity(&[]).is_err());
    }

    fn brute_distance(p: &[u32], sim: &SimilarityMatrix) -> f64 {
        let n = p.len();
        let mut d = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = if p[i] == p[j] { 1.0 } else { 0.0 };
                d += (a - sim.get(i, j)).powi(2);
            }
        }
        d
    }

    #[test]
    fn dahl_on_hand_built_partitions() {
        let parts = vec![vec![0, 0, 1, 1], vec![0, 0, 0, 1], vec![0, 1, 2, 3]];
        let sim = similarity(&parts).unwrap();
        let d: Vec<f64> = parts.iter().map(|p| brute_distance(p, &sim)).collect();
        // sim off-diagonals: (0,1)=2/3 (0,2)=1/3 (1,2)=1/3 (2,3)=1/3 others 0
        assert!((d[0] - 2.0 * (1.0 / 9.0 + 1.0 / 9.0 + 1.0 / 9.0 + 4.0 / 9.0)).abs() < 1e-12);
        let best = (0..3).min_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap()).unwrap();
        let sel = dahl_select(&parts, &sim).unwrap();
        assert_eq!(sel.index, best);
        assert!((sel.score - d[best]).abs() < 1e-12);
    }

    #[test]
    fn dahl_ties_go_to_the_earliest() {
        let parts = vec![vec![0, 1], vec![0, 0]];
        let sim = similarity(&parts).unwrap();
        let sel = dahl_select(&parts, &sim).unwrap();
        assert_eq!(sel.index, 0);
    }

    #[test]
    fn binary_round_trip() {
        let sim = similarity(&[vec![0, 1, 0], vec![1, 1, 0]]).unwrap();
        let mut buf = Vec::new();
        sim.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 9 * 8);
        assert_eq!(SimilarityMatrix::read_binary(&buf[..]).unwrap(), sim);
        assert_eq!(sim.to_csv().lines().count(), 3);
    }

    fn mixed() -> (Schema, Dataset) {
        let schema = build_schema(&[
            VariableSpec::continuous("x"),
            VariableSpec::binary("b"),
            VariableSpec::nominal("t", 4),
            VariableSpec::ordinal("o", 3),
        ])
        .unwrap();
        let ds = Dataset::new(
            vec![
                Column::Continuous(vec![1.0, 2.0, 3.0, 6.0]),
                Column::Categorical(vec![1, 0, 1, 1]),
                Column::Categorical(vec![0, 2, 1, 0]),
                Column::Categorical(vec![3, 0, 1, 3]),
            ],
            Some(vec![1.0, 2.0, 1.0, 4.0]),
        )
        .unwrap();
        (schema, ds)
    }

    #[test]
    fn expansion_layout() {
        let (schema, ds) = mixed();
        let e = expand_variables(&ds, &schema);
        assert_eq!(e.names, vec!["x", "b", "t=0", "t=1", "t=2", "t=3", "o"]);
        let x: Vec<f64> = (0..4).map(|i| e.row(i)[0]).collect();
        let m = x.iter().sum::<f64>() / 4.0;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert_eq!((0..4).map(|i| e.row(i)[1]).collect::<Vec<_>>(), vec![1.0, 0.0, 1.0, 1.0]);
        for i in 0..4 {
            assert_eq!(e.row(i)[2..6].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn expansion_of_single_variables() {
        let s = build_schema(&[VariableSpec::binary("b")]).unwrap();
        let d = Dataset::new(vec![Column::Categorical(vec![0, 1, 1])], None).unwrap();
        let e = expand_variables(&d, &s);
        assert_eq!((e.p_star(), e.data.clone()), (1, vec![0.0, 1.0, 1.0]));
        let s = build_schema(&[VariableSpec::nominal("t", 4)]).unwrap();
        let d = Dataset::new(vec![Column::Categorical(vec![0, 3, 1])], None).unwrap();
        assert_eq!(expand_variables(&d, &s).p_star(), 4);
        let s = build_schema(&[VariableSpec::continuous("c")]).unwrap();
        let d = Dataset::new(vec![Column::Continuous(vec![5.0, 5.0])], None).unwrap();
        assert_eq!(expand_variables(&d, &s).data, vec![0.0, 0.0]);
    }

    /// Direct double loop over clusters, columns and members.
    fn hm_oracle(labels: &[u32], e: &Expanded, w: &[f64]) -> f64 {
        let mut ks: Vec<u32> = labels.to_vec();
        ks.sort();
        ks.dedup();
        let mut hm = 0.0;
        for k in ks {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            let wk: f64 = members.iter().map(|&i| w[i]).sum();
            for j in 0..e.p_star() {
                let mut a = 0.0;
                let mut b = 0.0;
                for &i in &members {
                    let wi = w[i] / wk;
                    a += wi * e.row(i)[j] * e.row(i)[j];
                    b += wi * e.row(i)[j];
                }
                hm += members.len() as f64 * (a - b * b);
            }
        }
        hm
    }

    #[test]
    fn hm_of_singletons_is_exactly_zero_for_any_weights() {
        // w·y/w need not round back to y
        let e = Expanded {
            n: 3,
            names: vec!["y".into()],
            data: vec![0.14937858408378799, 0.47990407276755453, 7.1],
        };
        let w = [5.149858177657848e-6, 9.463741262385e-6, 1.0 / 3.0];
        assert_eq!(hm_measure(&[0, 1, 2], &e, &w), 0.0);
        assert_eq!(hm_measure(&[0, 0, 1], &Expanded { data: vec![2.2, 2.2, 1.0], ..e.clone() }, &w), 0.0);
    }

    #[test]
    fn hm_matches_double_loop() {
        let (schema, ds) = mixed();
        let e = expand_variables(&ds, &schema);
        let labels = [0, 1, 0, 1];
        let h = hm_measure(&labels, &e, ds.weights());
        assert!((h - hm_oracle(&labels, &e, ds.weights())).abs() < 1e-12);
        assert!(h > 0.0);
        assert_eq!(hm_measure(&[0, 1, 2, 3], &e, ds.weights()), 0.0);
    }

    #[test]
    fn hm_of_constant_column_is_zero() {
        let e = Expanded {
            n: 3,
            names: vec!["c".into()],
            data: vec![0.7; 3],
        };
        assert!(hm_measure(&[0, 0, 0], &e, &[1.0, 3.0, 2.0]) < 1e-28);
    }

    #[test]
    fn min_hm_never_exceeds_dahl() {
        let (schema, ds) = mixed();
        let e = expand_variables(&ds, &schema);
        let parts = vec![vec![0, 0, 0, 0], vec![0, 1, 0, 1], vec![0, 0, 1, 1], vec![0, 0, 0, 1]];
        let sim = similarity(&parts).unwrap();
        let dahl = dahl_select(&parts, &sim).unwrap();
        let hm = min_hm_select(&parts, &e, ds.weights()).unwrap();
        assert!(hm.score <= hm_measure(&dahl.labels, &e, ds.weights()));
    }

    #[test]
    fn summary_of_one_cluster_is_the_population() {
        let (schema, ds) = mixed();
        let t = cluster_summary(&[0, 0, 0, 0], &ds, &schema).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].values, t.rows[1].values);
        assert_eq!(t.rows[1].weight, 8.0);
        // weighted mean of x = (1 + 4 + 3 + 24)/8
        assert!((t.rows[1].values[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn summary_recovers_group_means() {
        let schema = build_schema(&[VariableSpec::continuous("x"), VariableSpec::nominal("t", 3)]).unwrap();
        let ds = Dataset::new(
            vec![
                Column::Continuous(vec![1.0, 3.0, 10.0, 10.0, 40.0]),
                Column::Categorical(vec![0, 0, 2, 1, 1]),
            ],
            Some(vec![1.0, 1.0, 2.0, 1.0, 1.0]),
        )
        .unwrap();
        let t = cluster_summary(&[5, 5, 9, 9, 9], &ds, &schema).unwrap();
        assert_eq!(t.columns, vec!["x", "t=0", "t=1", "t=2"]);
        assert_eq!(t.rows[0].values, vec![2.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.rows[1].values, vec![17.5, 0.0, 0.5, 0.5]);
        let shares: f64 = t.rows[..2].iter().map(|r| r.share_pct).sum();
        assert!((shares - 100.0).abs() < 1e-9);
        assert!(t.to_csv().starts_with("group,records,weight,share_pct,x,t=0"));
    }

    fn partition_strategy(n: usize) -> impl Strategy<Value = Vec<u32>> {
        proptest::collection::vec(0u32..4, n)
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_with_unit_diagonal(
            parts in proptest::collection::vec(partition_strategy(7), 1..8)
        ) {
            let sim = similarity(&parts).unwrap();
            for i in 0..7 {
                prop_assert_eq!(sim.get(i, i), 1.0);
                for j in 0..7 {
                    prop_assert_eq!(sim.get(i, j), sim.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&sim.get(i, j)));
                }
            }
        }

        #[test]
        fn dahl_matches_brute_force(parts in proptest::collection::vec(partition_strategy(6), 1..=10)) {
            let sim = similarity(&parts).unwrap();
            let sel = dahl_select(&parts, &sim).unwrap();
            let d: Vec<f64> = parts.iter().map(|p| brute_distance(p, &sim)).collect();
            for (k, dk) in d.iter().enumerate() {
                prop_assert!(sel.score <= dk + 1e-12);
                if k < sel.index {
                    prop_assert!(squared_distance(&parts[k], &sim) > sel.score);
                }
            }
            prop_assert_eq!(canonical_labels(&parts[sel.index]), sel.labels);
        }

        #[test]
        fn duplicating_a_partition_moves_toward_it(parts in proptest::collection::vec(partition_strategy(5), 1..6), pick in 0usize..6) {
            let pick = pick % parts.len();
            let before = similarity(&parts).unwrap();
            let mut more = parts.clone();
            more.push(parts[pick].clone());
            let after = similarity(&more).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let a = (parts[pick][i] == parts[pick][j]) as u8 as f64;
                    prop_assert!((after.get(i, j) - a).abs() <= (before.get(i, j) - a).abs() + 1e-15);
                }
            }
        }

        #[test]
        fn hm_invariant_to_relabel_and_permutation(
            labels in partition_strategy(6),
            xs in proptest::collection::vec(-5.0f64..5.0, 12),
            ws in proptest::collection::vec(0.1f64..5.0, 6),
            shift in 1u32..9,
        ) {
            let e = Expanded { n: 6, names: vec!["a".into(), "b".into()], data: xs.clone() };
            let h = hm_measure(&labels, &e, &ws);
            prop_assert!(h >= 0.0);
            let relabelled: Vec<u32> = labels.iter().map(|l| (l + shift) * 3).collect();
            prop_assert!((hm_measure(&relabelled, &e, &ws) - h).abs() < 1e-9);
            // reverse the records
            let rev_data: Vec<f64> = (0..6).rev().flat_map(|i| xs[2 * i..2 * i + 2].to_vec()).collect();
            let e2 = Expanded { n: 6, names: e.names.clone(), data: rev_data };
            let rl: Vec<u32> = labels.iter().rev().copied().collect();
            let rw: Vec<f64> = ws.iter().rev().copied().collect();
            prop_assert!((hm_measure(&rl, &e2, &rw) - h).abs() < 1e-9);
            prop_assert!((hm_measure(&labels, &e, &ws) - hm_oracle(&labels, &e, &ws)).abs() < 1e-9);
        }
    }
}
