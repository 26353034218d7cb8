//! Analytic gradients of the L1 objective against central differences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::nn::{Conv2d, Graph, Initializer, Mode, ParamId, ParamRole, ParamStore};
use crate::seed::stream_rng;
use crate::tensor::Tensor;

const STEP: f64 = 1e-5;
/// Lower bound on a group's gradient scale, so groups whose true gradient is
/// zero compare absolute rather than relative noise.
const SCALE_FLOOR: f64 = 1e-8;
/// Entries checked per parameter array; larger arrays are subsampled evenly
/// and always include their largest analytic entry.
const MAX_ENTRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub entries_checked: usize,
    /// Entries left out because the two probes fell on different linear
    /// pieces of a ReLU, max-pool or L1 term.
    pub entries_at_kink: usize,
    pub max_abs_error: f64,
    pub scale: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(groups: Vec<GroupError>, tolerance: f64) -> Self {
        let max_rel_error = groups.iter().map(|g| g.rel_error).fold(0.0, f64::max);
        GradCheckReport {
            groups,
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

fn chosen_entries(analytic: &[f64]) -> Vec<usize> {
    let n = analytic.len();
    if n <= MAX_ENTRIES {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..MAX_ENTRIES - 1).map(|k| k * n / (MAX_ENTRIES - 1)).collect();
    let top = (0..n)
        .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
        .unwrap_or(0);
    if !idx.contains(&top) {
        idx.push(top);
    }
    idx
}

/// Compare `grads` with central differences of `loss` for each trainable array.
fn compare(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    base_signature: u64,
    ids: &[ParamId],
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<(f64, u64)>,
) -> Result<Vec<GroupError>> {
    let mut groups = Vec::with_capacity(ids.len());
    for &id in ids {
        let len = store.value(id).len();
        let analytic = grads[id.index()]
            .as_ref()
            .map_or_else(|| vec![0.0; len], |g| g.data().to_vec());
        let entries = chosen_entries(&analytic);
        let (mut max_err, mut scale, mut at_kink) = (0.0f64, 0.0f64, 0);
        for &k in &entries {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let (up, sig_up) = loss(store)?;
            store.value_mut(id).data_mut()[k] = orig - step;
            let (down, sig_down) = loss(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            if sig_up != base_signature || sig_down != base_signature {
                at_kink += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * step);
            max_err = max_err.max((numeric - analytic[k]).abs());
            scale = scale.max(numeric.abs()).max(analytic[k].abs());
        }
        groups.push(GroupError {
            name: store.get(id).name.clone(),
            entries_checked: entries.len() - at_kink,
            entries_at_kink: at_kink,
            max_abs_error: max_err,
            scale,
            rel_error: max_err / scale.max(SCALE_FLOOR),
        });
    }
    Ok(groups)
}

fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
}

/// Move biases and normalization affines off their initial values, so that
/// masked (all-zero) regions do not sit exactly on a ReLU kink.
fn jitter(store: &mut ParamStore, rng: &mut impl Rng) {
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.role)).collect();
    for (id, role) in ids {
        let range = match role {
            ParamRole::Bias | ParamRole::Beta => -0.1..0.1,
            ParamRole::Gamma => 0.5..1.5,
            _ => continue,
        };
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(range.clone());
        }
    }
}

/// Check a micro model (train-mode normalization, hard attention on a random
/// rectangular mask) on a batch of two random images, at a point where
/// biases and normalization affines are randomized. Entries whose probes
/// straddle a kink are counted in [`GroupError::entries_at_kink`] and skipped.
pub fn gradient_check(config: &ModelConfig, tolerance: f64) -> Result<GradCheckReport> {
    let mut model = Model::build(config.clone())?;
    model.set_mode(Mode::Train);
    let side = config.input_side;
    let mut rng = stream_rng(config.rng_seed, "gradcheck", &[]);
    jitter(model.params_mut(), &mut rng);
    let images = random_tensor(&mut rng, [2, 3, side, side]);
    let targets = random_tensor(&mut rng, [2, 3, side, side]);
    let mut masks = Tensor::zeros([2, 1, side, side]);
    for n in 0..2 {
        let (x0, y0) = (rng.random_range(0..side / 2), rng.random_range(0..side / 2));
        let (w, h) = (
            rng.random_range(side / 4..=side / 2),
            rng.random_range(side / 4..=side / 2),
        );
        for y in y0..(y0 + h).min(side) {
            for x in x0..(x0 + w).min(side) {
                masks.set(n, 0, y, x, 1.0);
            }
        }
    }

    let record_loss = |model: &Model, g: &mut Graph| -> Result<_> {
        let x = g.input(images.clone());
        let pred = model.record(g, x, Some(&masks))?;
        let t = g.input(targets.clone());
        g.l1_loss(pred, t)
    };
    let mut g = Graph::new();
    let root = record_loss(&model, &mut g)?;
    let grads = g.backward(root, model.params());

    let ids = model.params().trainable_ids();
    let mut params = model.params().clone();
    let groups = compare(&mut params, &grads, g.kink_signature(), &ids, STEP, |store| {
        model.params_mut().load_values(store)?;
        let mut g = Graph::new();
        let root = record_loss(&model, &mut g)?;
        Ok((g.value(root).data()[0], g.kink_signature()))
    })?;
    Ok(GradCheckReport::new(groups, tolerance))
}

/// Check a lone 3×3 convolution (3 → 4 channels, with bias) on a 2×3×8×8 input.
pub fn gradient_check_single_conv(seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    let conv = Conv2d::new(&mut store, &mut init, "conv", 3, 4, 3, 1);
    let mut rng = stream_rng(seed, "gradcheck-conv", &[]);
    let input = random_tensor(&mut rng, [2, 3, 8, 8]);
    let target = random_tensor(&mut rng, [2, 4, 8, 8]);
    let record = |store: &ParamStore, g: &mut Graph| -> Result<_> {
        let x = g.input(input.clone());
        let y = conv.forward(g, store, x)?;
        let t = g.input(target.clone());
        g.l1_loss(y, t)
    };
    let mut g = Graph::new();
    let root = record(&store, &mut g)?;
    let grads = g.backward(root, &store);
    let ids = store.trainable_ids();
    let groups = compare(&mut store, &grads, g.kink_signature(), &ids, STEP, |s| {
        let mut g = Graph::new();
        let root = record(s, &mut g)?;
        Ok((g.value(root).data()[0], g.kink_signature()))
    })?;
    Ok(GradCheckReport::new(groups, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn micro() -> ModelConfig {
        ModelConfig {
            base_channels: 2,
            depth: 2,
            input_side: 16,
            rng_seed: 11,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn single_conv_matches_finite_differences() {
        let r = gradient_check_single_conv(5, 1e-6).unwrap();
        assert!(r.passed, "{r:#?}");
        assert_eq!(r.groups.len(), 2);
    }

    #[test]
    fn micro_model_matches_finite_differences() {
        let r = gradient_check(&micro(), 1e-3).unwrap();
        let worst = r
            .groups
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .unwrap();
        assert!(r.passed, "worst group {worst:?}");
        let skipped: usize = r.groups.iter().map(|g| g.entries_at_kink).sum();
        let checked: usize = r.groups.iter().map(|g| g.entries_checked).sum();
        assert!(skipped * 5 < checked, "{skipped} of {checked} entries at a kink");
        assert_eq!(
            r.groups.len(),
            Model::build(micro()).unwrap().params().trainable_ids().len()
        );
    }

    #[test]
    fn every_variant_matches_finite_differences() {
        for v in Variant::ALL {
            let cfg = ModelConfig {
                base_channels: 4,
                ..micro()
            }
            .with_variant(v);
            let r = gradient_check(&cfg, 1e-3).unwrap();
            let worst = r
                .groups
                .iter()
                .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
                .unwrap();
            assert!(r.passed, "{v:?}: worst group {worst:?}");
        }
    }

    #[test]
    fn zero_tolerance_fails() {
        assert!(!gradient_check_single_conv(5, 0.0).unwrap().passed);
        assert!(!gradient_check(&micro(), 0.0).unwrap().passed);
    }
}
