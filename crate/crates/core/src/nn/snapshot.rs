use std::collections::BTreeMap;
use std::path::Path;

use crate::container::{read_container, write_container, Container};
use crate::error::Result;
use crate::numeric::Tensor;

/// Named copy of every parameter, tagged with the body fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSnapshot {
    pub label: String,
    pub fingerprint: u64,
    pub params: BTreeMap<String, Tensor>,
}

impl ParamSnapshot {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(
            path,
            &Container {
                label: self.label.clone(),
                fingerprint: self.fingerprint,
                records: self.params.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container(path)?;
        Ok(Self {
            label: c.label,
            fingerprint: c.fingerprint,
            params: c.records,
        })
    }

    /// Parameters of stage `idx` (0-based), all branches included.
    pub fn stage_params(&self, idx: usize) -> BTreeMap<&str, &Tensor> {
        let prefix = format!("stage{}", idx + 1);
        self.params
            .iter()
            .filter(|(n, _)| {
                n.strip_prefix(&prefix)
                    .is_some_and(|rest| rest.starts_with('.') || rest.starts_with('['))
            })
            .map(|(n, t)| (n.as_str(), t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_filter_does_not_confuse_prefixes() {
        let mut params = BTreeMap::new();
        for n in ["stage1.w", "stage10.w", "stage1[a].b", "head[t].w"] {
            params.insert(n.to_string(), Tensor::scalar(1.0));
        }
        let s = ParamSnapshot { label: "x".into(), fingerprint: 0, params };
        let keys: Vec<_> = s.stage_params(0).into_keys().collect();
        assert_eq!(keys, vec!["stage1.w", "stage1[a].b"]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut params = BTreeMap::new();
        params.insert("stage1.w".to_string(), Tensor::new(vec![2, 2], vec![1.0, -0.5, 1e-300, 3.25]).unwrap());
        let s = ParamSnapshot { label: "post-task-1".into(), fingerprint: 77, params };
        let path = dir.path().join("snap.bin");
        s.save(&path).unwrap();
        assert_eq!(ParamSnapshot::load(&path).unwrap(), s);
    }
}
