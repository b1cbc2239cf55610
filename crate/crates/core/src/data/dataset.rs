use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container, Container};
use crate::error::{Error, Result};
use crate::nn::Targets;
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Hard(Vec<usize>),
    /// One row per example; rows sum to one.
    Soft(Tensor),
}

/// Examples stored as rows of a flat `(n × input_len)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    input_shape: Vec<usize>,
    labels: Labels,
    class_names: Vec<String>,
    split: Split,
    /// Superclass index per example, when the source has one.
    coarse: Option<Vec<usize>>,
    coarse_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        inputs: Tensor,
        input_shape: Vec<usize>,
        labels: Labels,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        let d = Self {
            inputs,
            input_shape,
            labels,
            class_names,
            split,
            coarse: None,
            coarse_names: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Attaches superclass labels and their names.
    pub fn with_coarse(mut self, coarse: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if coarse.len() != self.len() {
            return Err(Error::Data(format!(
                "{} coarse labels for {} examples",
                coarse.len(),
                self.len()
            )));
        }
        if let Some(bad) = coarse.iter().find(|&&c| c >= names.len()) {
            return Err(Error::Data(format!("coarse label {bad} out of range for {} superclasses", names.len())));
        }
        self.coarse = Some(coarse);
        self.coarse_names = names;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.shape().len() != 2 {
            return Err(Error::Data("inputs must be an (examples × features) matrix".into()));
        }
        if self.input_shape.iter().product::<usize>() != self.inputs.cols() {
            return Err(Error::Dimension {
                op: "dataset",
                left: self.inputs.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        let c = self.class_names.len();
        match &self.labels {
            Labels::Hard(v) => {
                if v.len() != self.inputs.rows() {
                    return Err(Error::Data(format!("{} labels for {} examples", v.len(), self.inputs.rows())));
                }
                if let Some(bad) = v.iter().find(|&&y| y >= c) {
                    return Err(Error::Data(format!("label {bad} out of range for {c} classes")));
                }
            }
            Labels::Soft(t) => {
                if t.rows() != self.inputs.rows() || t.cols() != c {
                    return Err(Error::Data(format!(
                        "soft labels {:?} do not match {} examples × {c} classes",
                        t.shape(),
                        self.inputs.rows()
                    )));
                }
                for i in 0..t.rows() {
                    let s: f64 = t.row(i).iter().sum();
                    if (s - 1.0).abs() > 1e-9 || t.row(i).iter().any(|&p| p < 0.0) {
                        return Err(Error::Data(format!("soft label row {i} is not a distribution")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Zero-example dataset with the given layout.
    pub fn empty(input_shape: Vec<usize>, class_names: Vec<String>, split: Split) -> Self {
        let cols = input_shape.iter().product();
        Self {
            inputs: Tensor::from_parts(vec![0, cols], Vec::new()),
            input_shape,
            labels: Labels::Hard(Vec::new()),
            class_names,
            split,
            coarse: None,
            coarse_names: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn hard_labels(&self) -> Result<&[usize]> {
        match &self.labels {
            Labels::Hard(v) => Ok(v),
            Labels::Soft(_) => Err(Error::Data("dataset has soft labels".into())),
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn coarse(&self) -> Option<&[usize]> {
        self.coarse.as_deref()
    }

    pub fn coarse_names(&self) -> &[String] {
        &self.coarse_names
    }

    /// Labels as soft one-hot rows.
    pub fn soft_labels(&self) -> Tensor {
        match &self.labels {
            Labels::Soft(t) => t.clone(),
            Labels::Hard(v) => {
                let c = self.n_classes();
                let mut t = Tensor::from_parts(vec![v.len(), c], vec![0.0; v.len() * c]);
                for (i, &y) in v.iter().enumerate() {
                    t.set(i, y, 1.0);
                }
                t
            }
        }
    }

    pub fn targets(&self) -> Targets {
        match &self.labels {
            Labels::Hard(v) => Targets::Hard(v.clone()),
            Labels::Soft(t) => Targets::Soft(t.clone()),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            input_shape: self.input_shape.clone(),
            labels: match &self.labels {
                Labels::Hard(v) => Labels::Hard(idx.iter().map(|&i| v[i]).collect()),
                Labels::Soft(t) => Labels::Soft(t.select_rows(idx)),
            },
            class_names: self.class_names.clone(),
            split: self.split,
            coarse: self.coarse.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
            coarse_names: self.coarse_names.clone(),
        }
    }

    /// First `n` examples (all if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Example count per class (hard labels; soft labels count their argmax).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        match &self.labels {
            Labels::Hard(v) => v.iter().for_each(|&y| counts[y] += 1),
            Labels::Soft(t) => (0..t.rows()).for_each(|i| counts[crate::nn::argmax(t.row(i))] += 1),
        }
        counts
    }

    pub(crate) fn map_inputs(&self, f: impl FnOnce(&Tensor) -> Tensor) -> Dataset {
        let mut d = self.clone();
        d.inputs = f(&self.inputs);
        d
    }

    /// Stores the dataset as tensor records in the binary container.
    pub fn export(&self, path: &Path, label: &str) -> Result<()> {
        let mut records = BTreeMap::new();
        records.insert("inputs".to_string(), self.inputs.clone());
        records.insert(
            "input_shape".to_string(),
            Tensor::from_parts(
                vec![self.input_shape.len()],
                self.input_shape.iter().map(|&d| d as f64).collect(),
            ),
        );
        records.insert("labels".to_string(), self.soft_labels());
        if let Labels::Hard(v) = &self.labels {
            records.insert("hard_labels".to_string(), index_tensor(v));
        }
        if let Some(c) = &self.coarse {
            records.insert("coarse_labels".to_string(), index_tensor(c));
        }
        let meta = serde_json::json!({
            "classes": self.class_names,
            "coarse_classes": self.coarse_names,
            "split": self.split,
            "label": label,
        });
        write_container(
            path,
            &Container {
                label: meta.to_string(),
                fingerprint: self.fingerprint(),
                records,
            },
        )
    }

    pub fn import(path: &Path) -> Result<Dataset> {
        let c = read_container(path)?;
        let meta: serde_json::Value =
            serde_json::from_str(&c.label).map_err(|e| Error::Data(format!("dataset metadata: {e}")))?;
        let class_names: Vec<String> = serde_json::from_value(meta["classes"].clone())
            .map_err(|e| Error::Data(format!("dataset classes: {e}")))?;
        let split: Split =
            serde_json::from_value(meta["split"].clone()).map_err(|e| Error::Data(format!("dataset split: {e}")))?;
        let get = |n: &str| {
            c.records
                .get(n)
                .cloned()
                .ok_or_else(|| Error::Data(format!("exported dataset lacks `{n}`")))
        };
        let input_shape = get("input_shape")?.data().iter().map(|&d| d as usize).collect();
        let labels = match c.records.get("hard_labels") {
            Some(t) => Labels::Hard(t.data().iter().map(|&v| v as usize).collect()),
            None => Labels::Soft(get("labels")?),
        };
        let mut d = Dataset::new(get("inputs")?, input_shape, labels, class_names, split)?;
        if let Some(t) = c.records.get("coarse_labels") {
            let names: Vec<String> = serde_json::from_value(meta["coarse_classes"].clone())
                .map_err(|e| Error::Data(format!("dataset superclasses: {e}")))?;
            d = d.with_coarse(t.data().iter().map(|&v| v as usize).collect(), names)?;
        }
        Ok(d)
    }

    /// Hash of the inputs, labels and class names.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.inputs.len() * 8 + 64);
        for &d in self.inputs.shape() {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.inputs.data() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for v in self.soft_labels().data() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for n in &self.class_names {
            bytes.extend_from_slice(n.as_bytes());
            bytes.push(0);
        }
        crate::numeric::fnv1a(&bytes)
    }
}

fn index_tensor(v: &[usize]) -> Tensor {
    Tensor::from_parts(vec![v.len().max(1)], if v.is_empty() { vec![0.0] } else { v.iter().map(|&x| x as f64).collect() })
}

/// Concatenates datasets sharing layout and class names.
pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
    let mut labels_hard = Vec::new();
    let mut soft = Vec::new();
    let any_soft = parts.iter().any(|p| matches!(p.labels, Labels::Soft(_)));
    let mut coarse: Option<Vec<usize>> = first.coarse.as_ref().map(|_| Vec::new());
    for p in parts {
        if p.input_shape != first.input_shape || p.class_names != first.class_names {
            return Err(Error::Data("datasets differ in layout or classes".into()));
        }
        if any_soft {
            soft.push(p.soft_labels());
        } else {
            labels_hard.extend_from_slice(p.hard_labels()?);
        }
        match (&mut coarse, &p.coarse) {
            (Some(acc), Some(c)) => acc.extend_from_slice(c),
            _ => coarse = None,
        }
    }
    let non_empty: Vec<&Tensor> = parts.iter().filter(|p| !p.is_empty()).map(|p| &p.inputs).collect();
    let inputs = if non_empty.is_empty() {
        first.inputs.clone()
    } else {
        Tensor::concat_rows(&non_empty)?
    };
    let labels = if any_soft {
        let s: Vec<&Tensor> = soft.iter().filter(|t| t.rows() > 0).collect();
        Labels::Soft(if s.is_empty() { soft[0].clone() } else { Tensor::concat_rows(&s)? })
    } else {
        Labels::Hard(labels_hard)
    };
    Ok(Dataset {
        inputs,
        input_shape: first.input_shape.clone(),
        labels,
        class_names: first.class_names.clone(),
        split: first.split,
        coarse,
        coarse_names: first.coarse_names.clone(),
    })
}

/// Per-channel affine standardization. For flat inputs each feature is its own channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn channels(shape: &[usize]) -> (usize, usize) {
        if shape.len() == 3 {
            (shape[0], shape[1] * shape[2])
        } else {
            (shape.iter().product(), 1)
        }
    }

    pub fn fit(d: &Dataset) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::Data("cannot standardize with an empty dataset".into()));
        }
        let (c, plane) = Self::channels(&d.input_shape);
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..d.len() {
            for (j, &v) in d.inputs.row(i).iter().enumerate() {
                sum[j / plane] += v;
                sq[j / plane] += v * v;
            }
        }
        let n = (d.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let (c, plane) = Self::channels(&d.input_shape);
        if c != self.mean.len() {
            return Err(Error::Dimension {
                op: "standardize",
                left: vec![self.mean.len()],
                right: d.input_shape.clone(),
            });
        }
        Ok(d.map_inputs(|x| {
            let mut x = x.clone();
            let cols = x.cols();
            for (k, v) in x.data_mut().iter_mut().enumerate() {
                let ch = (k % cols) / plane;
                *v = (*v - self.mean[ch]) / self.std[ch];
            }
            x
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    MultiHead,
    SingleHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Two sequential tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPair {
    pub task1: TaskData,
    pub task2: TaskData,
    pub head_mode: HeadMode,
    pub description: String,
}

impl TaskPair {
    /// Fits on task-1 train and applies to all four splits.
    pub fn standardized(&self) -> Result<TaskPair> {
        let s = Standardizer::fit(&self.task1.train)?;
        Ok(TaskPair {
            task1: TaskData {
                train: s.apply(&self.task1.train)?,
                test: s.apply(&self.task1.test)?,
            },
            task2: TaskData {
                train: s.apply(&self.task2.train)?,
                test: s.apply(&self.task2.test)?,
            },
            head_mode: self.head_mode,
            description: self.description.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        Dataset::new(x, vec![2], Labels::Hard(vec![0, 1, 1]), vec!["a".into(), "b".into()], Split::Train).unwrap()
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Tensor::zeros(&[2, 2]);
        let names = vec!["a".to_string()];
        assert!(Dataset::new(x.clone(), vec![2], Labels::Hard(vec![0, 1]), names.clone(), Split::Train).is_err());
        let soft = Tensor::from_rows(&[vec![0.5], vec![0.4]]).unwrap();
        assert!(Dataset::new(x, vec![2], Labels::Soft(soft), names, Split::Train).is_err());
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let d = toy();
        let s = Standardizer::fit(&d).unwrap();
        let z = s.apply(&d).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| z.inputs().get(i, j)).collect();
            let m = col.iter().sum::<f64>() / 3.0;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let names = (0..4).map(|i| format!("s{i}")).collect();
        let d = toy().with_coarse(vec![3, 3, 1], names).unwrap();
        let p = dir.path().join("d.bin");
        d.export(&p, "toy").unwrap();
        assert_eq!(Dataset::import(&p).unwrap(), d);
    }

    #[test]
    fn concat_and_counts() {
        let d = toy();
        let c = concat(&[&d, &d.select(&[0])]).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.class_counts(), vec![2, 2]);
    }
}
