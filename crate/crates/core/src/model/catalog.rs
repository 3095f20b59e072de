use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ParamValue, ValueKind};
use crate::engine::ExecutorConfig;

/// A named port and the data format tag it accepts or produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub name: String,
    pub format: String,
}

impl Port {
    pub fn new(name: impl Into<String>, format: impl Into<String>) -> Self {
        Port {
            name: name.into(),
            format: format.into(),
        }
    }
}

/// One entry of a module's parameter schema.
///
/// `affects_output = false` marks parameters that change how a module runs
/// but not what it produces (thread counts, verbosity). They are excluded
/// from provenance fingerprints and from parameter-match denominators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamSpec", into = "RawParamSpec")]
pub struct ParamSpec {
    pub name: String,
    pub kind: ValueKind,
    pub default: ParamValue,
    pub affects_output: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, kind: ValueKind, default: ParamValue) -> Self {
        ParamSpec {
            name: name.into(),
            kind,
            default,
            affects_output: true,
        }
    }

    pub fn int(name: impl Into<String>, default: i64) -> Self {
        Self::new(name, ValueKind::Int, ParamValue::Int(default))
    }

    pub fn inert(mut self) -> Self {
        self.affects_output = false;
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamSpec {
    name: String,
    kind: ValueKind,
    default: serde_json::Value,
    #[serde(default = "yes")]
    affects_output: bool,
}

fn yes() -> bool {
    true
}

impl TryFrom<RawParamSpec> for ParamSpec {
    type Error = String;

    fn try_from(raw: RawParamSpec) -> Result<Self, String> {
        let default = ParamValue::from_json(&raw.default, &raw.kind).ok_or_else(|| {
            format!(
                "default {} of parameter `{}` is not a valid {}",
                raw.default, raw.name, raw.kind
            )
        })?;
        Ok(ParamSpec {
            name: raw.name,
            kind: raw.kind,
            default,
            affects_output: raw.affects_output,
        })
    }
}

impl From<ParamSpec> for RawParamSpec {
    fn from(p: ParamSpec) -> Self {
        RawParamSpec {
            default: p.default.to_json(),
            name: p.name,
            kind: p.kind,
            affects_output: p.affects_output,
        }
    }
}

/// A processing module: ports, parameter schema and the executor that runs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSpec {
    pub id: String,
    #[serde(default)]
    pub input_ports: Vec<Port>,
    #[serde(default)]
    pub output_ports: Vec<Port>,
    #[serde(default)]
    pub param_schema: Vec<ParamSpec>,
    pub executor: ExecutorConfig,
    /// Opaque pointer to the implementation (script path, image tag, ...).
    #[serde(default)]
    pub source_ref: String,
}

impl ModuleSpec {
    pub fn input_port(&self, name: &str) -> Option<&Port> {
        self.input_ports.iter().find(|p| p.name == name)
    }

    pub fn output_port(&self, name: &str) -> Option<&Port> {
        self.output_ports.iter().find(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.param_schema.iter().find(|p| p.name == name)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::BadModule {
            module: self.id.clone(),
            reason,
        };
        let mut ins = BTreeSet::new();
        for p in &self.input_ports {
            if !ins.insert(&p.name) {
                return Err(bad(format!("duplicate input port `{}`", p.name)));
            }
        }
        let mut outs = BTreeSet::new();
        for p in &self.output_ports {
            if !outs.insert(&p.name) {
                return Err(bad(format!("duplicate output port `{}`", p.name)));
            }
        }
        let mut params = BTreeSet::new();
        for p in &self.param_schema {
            if !params.insert(&p.name) {
                return Err(bad(format!("duplicate parameter `{}`", p.name)));
            }
            if !p.default.conforms_to(&p.kind) {
                return Err(bad(format!("default of `{}` is not a {}", p.name, p.kind)));
            }
        }
        Ok(())
    }
}

/// A raw input dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub dataset_id: String,
    pub format: String,
    /// `inline:<text>` embeds the bytes; anything else is a file path
    /// (optionally prefixed with `file://`).
    pub uri: String,
}

impl DatasetRef {
    pub fn inline(id: impl Into<String>, format: impl Into<String>, bytes: &str) -> Self {
        DatasetRef {
            dataset_id: id.into(),
            format: format.into(),
            uri: format!("inline:{bytes}"),
        }
    }

    pub fn read(&self) -> std::io::Result<Vec<u8>> {
        if let Some(text) = self.uri.strip_prefix("inline:") {
            return Ok(text.as_bytes().to_vec());
        }
        let path = self.uri.strip_prefix("file://").unwrap_or(&self.uri);
        std::fs::read(path)
    }
}

/// Module and dataset registries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    modules: BTreeMap<String, ModuleSpec>,
    datasets: BTreeMap<String, DatasetRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    modules: Vec<ModuleSpec>,
    #[serde(default)]
    datasets: Vec<DatasetRef>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_module(&mut self, module: ModuleSpec) -> Result<(), ModelError> {
        module.check()?;
        if self.modules.contains_key(&module.id) {
            return Err(ModelError::Duplicate(module.id));
        }
        self.modules.insert(module.id.clone(), module);
        Ok(())
    }

    pub fn add_dataset(&mut self, dataset: DatasetRef) -> Result<(), ModelError> {
        if self.datasets.contains_key(&dataset.dataset_id) {
            return Err(ModelError::Duplicate(dataset.dataset_id));
        }
        self.datasets.insert(dataset.dataset_id.clone(), dataset);
        Ok(())
    }

    pub fn module(&self, id: &str) -> Option<&ModuleSpec> {
        self.modules.get(id)
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetRef> {
        self.datasets.get(id)
    }

    pub fn modules(&self) -> impl Iterator<Item = &ModuleSpec> {
        self.modules.values()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &DatasetRef> {
        self.datasets.values()
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: CatalogFile = serde_json::from_str(text)?;
        let mut cat = Catalog::new();
        for m in file.modules {
            cat.add_module(m)?;
        }
        for d in file.datasets {
            cat.add_dataset(d)?;
        }
        Ok(cat)
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            modules: self.modules.values().cloned().collect(),
            datasets: self.datasets.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ModelError::Parse(serde_json::Error::io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            )))
        })?;
        Self::from_json(&text)
    }
}
