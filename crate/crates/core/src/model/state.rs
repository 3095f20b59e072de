use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ModelError, ModuleSpec, ParamValue};
use crate::digest::{CanonicalHasher, Digest};

/// Complete canonical parameter assignment of one module instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolState {
    pub module_id: String,
    /// Every schema parameter, defaults filled. `BTreeMap` keeps names sorted.
    pub params: BTreeMap<String, ParamValue>,
    /// Parameters declared as not affecting the module's output.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub inert: BTreeSet<String>,
    pub digest: Digest,
}

impl ToolState {
    fn build(
        module_id: String,
        params: BTreeMap<String, ParamValue>,
        inert: BTreeSet<String>,
    ) -> Self {
        let digest = Self::digest_of(&module_id, &params, |_| true);
        ToolState {
            module_id,
            params,
            inert,
            digest,
        }
    }

    fn digest_of(
        module_id: &str,
        params: &BTreeMap<String, ParamValue>,
        keep: impl Fn(&str) -> bool,
    ) -> Digest {
        let mut h = CanonicalHasher::new("flowcache/tool-state/v1");
        h.str(module_id);
        for (name, value) in params.iter().filter(|(n, _)| keep(n)) {
            h.str(name).str(value.tag()).str(&value.canonical());
        }
        h.finish()
    }

    /// Digest restricted to output-affecting parameters. Equal to
    /// [`ToolState::digest`] when no parameter is inert.
    pub fn result_digest(&self) -> Digest {
        if self.inert.is_empty() {
            return self.digest;
        }
        let mut h = CanonicalHasher::new("flowcache/tool-state/result/v1");
        h.digest(&Self::digest_of(&self.module_id, &self.params, |n| {
            !self.inert.contains(n)
        }));
        h.finish()
    }

    /// Parameters that count toward fingerprints and parameter matching.
    pub fn output_params(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.params.iter().filter(|(n, _)| !self.inert.contains(*n))
    }

    pub fn param(&self, name: &str) -> Option<&ParamValue> {
        self.params.get(name)
    }
}

/// Builds the canonical state of `module` from a partial assignment.
pub fn canonical_state(
    module: &ModuleSpec,
    overrides: &BTreeMap<String, ParamValue>,
) -> Result<ToolState, ModelError> {
    for (name, value) in overrides {
        let spec = module.param(name).ok_or_else(|| ModelError::UnknownParam {
            module: module.id.clone(),
            param: name.clone(),
        })?;
        if !value.conforms_to(&spec.kind) {
            return Err(ModelError::KindMismatch {
                module: module.id.clone(),
                param: name.clone(),
                expected: spec.kind.to_string(),
                got: format!("{} {}", value.tag(), value),
            });
        }
    }
    let params = module
        .param_schema
        .iter()
        .map(|p| {
            let v = overrides.get(&p.name).unwrap_or(&p.default).clone();
            (p.name.clone(), v)
        })
        .collect();
    let inert = module
        .param_schema
        .iter()
        .filter(|p| !p.affects_output)
        .map(|p| p.name.clone())
        .collect();
    Ok(ToolState::build(module.id.clone(), params, inert))
}

/// [`canonical_state`] over untyped JSON values, typed by the schema.
pub fn canonical_state_json(
    module: &ModuleSpec,
    overrides: &serde_json::Map<String, serde_json::Value>,
) -> Result<ToolState, ModelError> {
    let mut typed = BTreeMap::new();
    for (name, raw) in overrides {
        let spec = module.param(name).ok_or_else(|| ModelError::UnknownParam {
            module: module.id.clone(),
            param: name.clone(),
        })?;
        let v = ParamValue::from_json(raw, &spec.kind).ok_or_else(|| ModelError::KindMismatch {
            module: module.id.clone(),
            param: name.clone(),
            expected: spec.kind.to_string(),
            got: raw.to_string(),
        })?;
        typed.insert(name.clone(), v);
    }
    canonical_state(module, &typed)
}
