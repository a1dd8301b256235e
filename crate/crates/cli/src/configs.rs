//! TOML configuration files and the frozen copies kept in run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmfuse_core::classifier::ClassifierConfig;
use mmfuse_core::evaluation::{ConfigSet, SweepConfigs};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let table = read_table(path)?;
    Table::try_into(table).with_context(|| format!("parsing {}", path.display()))
}

// `input_dim` is taken from the data, so config files may omit it.
fn with_input_dim(mut table: Table) -> Table {
    table.entry("input_dim").or_insert(Value::Integer(0));
    table
}

fn classifier_from(table: Table, what: &str) -> Result<ClassifierConfig> {
    with_input_dim(table)
        .try_into()
        .with_context(|| format!("parsing classifier config {what}"))
}

fn config_set_from(mut table: Table, what: &str) -> Result<ConfigSet> {
    let mut take = |key: &str| -> Result<ClassifierConfig> {
        match table.remove(key) {
            Some(Value::Table(t)) => classifier_from(t, &format!("{what}.{key}")),
            Some(_) => bail!("{what}.{key}: expected a table"),
            None => bail!("{what}: missing [{key}]"),
        }
    };
    let set = ConfigSet {
        acoustic_only: take("acoustic_only")?,
        text_only: take("text_only")?,
        early_fusion: take("early_fusion")?,
    };
    if let Some(key) = table.keys().next() {
        bail!("{what}: unknown key {key:?}");
    }
    Ok(set)
}

/// Classifier configuration; defaults when no file is given.
pub fn load_classifier(path: Option<&Path>) -> Result<ClassifierConfig> {
    match path {
        None => Ok(ClassifierConfig::new(0)),
        Some(p) => classifier_from(read_table(p)?, &p.display().to_string()),
    }
}

/// Accepts a single classifier config (shared by every strategy and layer),
/// a config set with `[acoustic_only]`, `[text_only]` and `[early_fusion]`
/// tables, or a sweep config with `[shared]` and `[per_layer.<n>]` sets.
pub fn load_sweep_configs(path: Option<&Path>) -> Result<SweepConfigs> {
    let Some(p) = path else {
        return Ok(SweepConfigs::shared(ConfigSet::shared(ClassifierConfig::new(0))));
    };
    let name = p.display().to_string();
    let mut table = read_table(p)?;
    if let Some(shared) = table.remove("shared") {
        let Value::Table(shared) = shared else {
            bail!("{name}: [shared] must be a table");
        };
        let mut per_layer = BTreeMap::new();
        if let Some(layers) = table.remove("per_layer") {
            let Value::Table(layers) = layers else {
                bail!("{name}: [per_layer] must be a table");
            };
            for (key, set) in layers {
                let layer: u8 = key
                    .parse()
                    .with_context(|| format!("{name}: per_layer key {key:?} is not a layer number"))?;
                let Value::Table(set) = set else {
                    bail!("{name}: [per_layer.{key}] must be a table");
                };
                per_layer.insert(layer, config_set_from(set, &format!("{name}: per_layer.{key}"))?);
            }
        }
        if let Some(key) = table.keys().next() {
            bail!("{name}: unknown key {key:?}");
        }
        return Ok(SweepConfigs {
            shared: config_set_from(shared, &format!("{name}: shared"))?,
            per_layer,
        });
    }
    if table.contains_key("acoustic_only") {
        return Ok(SweepConfigs::shared(config_set_from(table, &name)?));
    }
    Ok(SweepConfigs::shared(ConfigSet::shared(classifier_from(table, &name)?)))
}

/// Serializable form of [`SweepConfigs`]; TOML keys must be strings.
#[derive(Serialize)]
struct SweepConfigsFile<'a> {
    shared: &'a ConfigSet,
    per_layer: BTreeMap<String, &'a ConfigSet>,
}

pub fn sweep_configs_toml(configs: &SweepConfigs) -> Result<String> {
    let file = SweepConfigsFile {
        shared: &configs.shared,
        per_layer: configs.per_layer.iter().map(|(l, c)| (l.to_string(), c)).collect(),
    };
    Ok(toml::to_string(&file)?)
}

/// A run directory. Every configuration in effect is written under
/// `config/` so the run can be reproduced from the directory alone.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        fs::create_dir_all(path.join("config")).with_context(|| format!("creating {}", path.display()))?;
        let argv: Vec<String> = std::env::args().collect();
        let run = RunDir { path: path.to_path_buf() };
        run.write("config/command.txt", format!("{}\n", argv.join(" ")))?;
        Ok(run)
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn freeze<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = toml::to_string(value).with_context(|| format!("serializing {name}"))?;
        self.write(format!("config/{name}.toml"), text)?;
        Ok(())
    }

    pub fn freeze_text(&self, name: &str, text: &str) -> Result<()> {
        self.write(format!("config/{name}.toml"), text)?;
        Ok(())
    }
}

/// Parses `1-12`, `3`, or `1,4,8-10`.
pub fn parse_list(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty range {part:?}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("not a number: {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("empty list {spec:?}");
    }
    Ok(out)
}

pub fn parse_layers(spec: &str) -> Result<Vec<u8>> {
    let mut layers = Vec::new();
    for v in parse_list(spec)? {
        if !(1..=12).contains(&v) {
            bail!("layer {v} outside 1..12");
        }
        if !layers.contains(&(v as u8)) {
            layers.push(v as u8);
        }
    }
    Ok(layers)
}
