use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Model, ParamSnapshot};
use crate::numeric::{givens_product, svd, Tensor};

/// Frozen features `g_μ(x)`: one row per example, `p` columns. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    g: Tensor,
    fingerprint: u64,
}

impl FeatureMatrix {
    pub fn new(g: Tensor, fingerprint: u64) -> Result<Self> {
        g.dims2("feature matrix")?;
        if !g.all_finite() {
            return Err(Error::Numeric("feature matrix has non-finite entries".into()));
        }
        Ok(Self { g, fingerprint })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.g
    }

    /// Feature count `p`.
    pub fn width(&self) -> usize {
        self.g.cols()
    }

    pub fn len(&self) -> usize {
        self.g.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Activations at `tap` (default: the last stage, just below the head) of
/// `template` loaded with `snapshot`, on every example of `data`.
pub fn extract_features(
    template: &Model,
    snapshot: &ParamSnapshot,
    data: &Dataset,
    tap: Option<usize>,
) -> Result<FeatureMatrix> {
    let mut model = template.clone();
    model.restore_all(snapshot)?;
    let tap = tap.unwrap_or(model.stage_count() - 1);
    if tap >= model.stage_count() {
        return Err(Error::config("analytic.tap", format!("no stage {tap}")));
    }
    let mut acts = model.stage_activations(None, data.inputs())?;
    let fp = snapshot.fingerprint ^ data.fingerprint().rotate_left(17) ^ tap as u64;
    FeatureMatrix::new(acts.swap_remove(tap), fp)
}

/// `Θ(x, x′) = Σ_μ g_μ(x) g_μ(x′)`: rows index `g_test`, columns index `g_train`.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapKernel {
    pub theta: Tensor,
}

pub fn overlap_kernel(g_test: &FeatureMatrix, g_train: &FeatureMatrix) -> Result<OverlapKernel> {
    if g_test.width() != g_train.width() {
        return Err(Error::Dimension {
            op: "overlap_kernel",
            left: g_test.g.shape().to_vec(),
            right: g_train.g.shape().to_vec(),
        });
    }
    Ok(OverlapKernel {
        theta: g_test.g.matmul(&g_train.g.transpose()?)?,
    })
}

/// `g′ = R(θ)·g`, with `R` built on the right singular basis of `basis_from`.
pub fn rotate_features(g: &FeatureMatrix, theta: f64, basis_from: &FeatureMatrix) -> Result<FeatureMatrix> {
    let p = g.width();
    if p < 2 {
        return Err(Error::Precondition("rotation needs at least two features".into()));
    }
    if basis_from.width() != p {
        return Err(Error::Dimension {
            op: "rotate_features",
            left: g.g.shape().to_vec(),
            right: basis_from.g.shape().to_vec(),
        });
    }
    let basis = svd(&basis_from.g)?;
    let r = givens_product(theta, p, basis.right_basis())?;
    // rows are examples, so each row maps to R·g
    let rotated = g.g.matmul(&r.transpose()?)?;
    FeatureMatrix::new(rotated, g.fingerprint ^ theta.to_bits().rotate_left(29))
}
