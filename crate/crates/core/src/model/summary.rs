use std::fmt;

use serde::Serialize;

use crate::nn::{ParamRole, ParamStore};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    /// Shape of the layer's kernel (or of its scale vector for normalization).
    pub kernel_shape: Vec<usize>,
    /// Trainable parameters of the layer.
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterSummary {
    pub layers: Vec<LayerSummary>,
    pub total: usize,
}

impl ParameterSummary {
    /// Group trainable arrays by layer name, in construction order.
    pub fn from_store(store: &ParamStore) -> Self {
        let mut layers: Vec<LayerSummary> = Vec::new();
        for (_, p) in store.iter() {
            if !p.role.is_trainable() {
                continue;
            }
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(prefix, _)| prefix);
            let count = p.value.len();
            match layers.last_mut() {
                Some(last) if last.name == layer => last.parameters += count,
                _ => layers.push(LayerSummary {
                    name: layer.to_string(),
                    kernel_shape: Vec::new(),
                    parameters: count,
                }),
            }
            let last = layers.last_mut().expect("just pushed");
            if matches!(p.role, ParamRole::Weight | ParamRole::Gamma) {
                let s = p.value.shape();
                last.kernel_shape = if p.role == ParamRole::Gamma {
                    vec![s[0]]
                } else {
                    s.to_vec()
                };
            }
        }
        let total = layers.iter().map(|l| l.parameters).sum();
        ParameterSummary { layers, total }
    }
}

impl fmt::Display for ParameterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:<18}  {:>10}", "layer", "kernel", "params")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<width$}  {:<18}  {:>10}",
                l.name,
                format!("{:?}", l.kernel_shape),
                l.parameters
            )?;
        }
        write!(f, "{:<width$}  {:<18}  {:>10}", "total", "", self.total)
    }
}
