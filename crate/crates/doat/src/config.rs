//! Line-oriented configuration files: `key = value` pairs under
//! `[section]` headers, full-line `#` comments, nothing else. The
//! format parses with a handful of string operations in any language.
//!
//! Sections: `[dataset]` (host coordinates), `[overlay]` (curve and
//! filter geometry), `[run]` (mode, density, throttling, seed),
//! `[output]` (results path) and `[sweep]` (axis lists for the sweep
//! command). Unknown sections or keys are rejected with their line
//! number; every default the file omits is materialised into the run
//! metadata, so a results file always names the exact configuration
//! that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiments::{DatasetSpec, Mode, Scenario, SweepSpec};
use crate::sfc::CurveKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown key {key:?} in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: unknown section [{0}]", .section)]
    UnknownSection { line: usize, section: String },
    #[error("missing required key {key:?} in section [{section}]")]
    Missing { section: String, key: String },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
}

const SECTIONS: &[&str] = &["dataset", "overlay", "run", "output", "sweep"];

#[derive(Debug, Default)]
struct Section {
    entries: BTreeMap<String, (usize, String)>,
}

#[derive(Debug, Default)]
struct Parsed {
    sections: BTreeMap<String, Section>,
}

impl Parsed {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.sections
            .get_mut(section)
            .and_then(|s| s.entries.remove(key))
    }

    fn reject_leftovers(&self) -> Result<(), ConfigError> {
        for (name, section) in &self.sections {
            if let Some((key, (line, _))) = section.entries.iter().next() {
                return Err(ConfigError::UnknownKey {
                    line: *line,
                    section: name.clone(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

fn parse_text(text: &str) -> Result<Parsed, ConfigError> {
    let mut parsed = Parsed::default();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    reason: "unterminated section header".into(),
                });
            };
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::UnknownSection {
                    line: line_no,
                    section: name.to_string(),
                });
            }
            parsed.sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: line_no,
                reason: format!("expected `key = value`, got {line:?}"),
            });
        };
        let Some(section) = current.clone() else {
            return Err(ConfigError::Parse {
                line: line_no,
                reason: "key outside any [section]".into(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let slot = parsed
            .sections
            .get_mut(&section)
            .expect("section created on header");
        if slot.entries.insert(key.clone(), (line_no, value)).is_some() {
            return Err(ConfigError::Parse {
                line: line_no,
                reason: format!("duplicate key {key:?}"),
            });
        }
    }
    Ok(parsed)
}

fn parse_as<T: std::str::FromStr>(
    entry: Option<(usize, String)>,
    key: &str,
    default: T,
) -> Result<T, ConfigError> {
    match entry {
        None => Ok(default),
        Some((line, v)) => v.parse().map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("cannot parse {v:?}"),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(
    entry: Option<(usize, String)>,
    key: &str,
) -> Result<Vec<T>, ConfigError> {
    let Some((line, v)) = entry else {
        return Ok(Vec::new());
    };
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: format!("cannot parse list item {s:?}"),
            })
        })
        .collect()
}

/// Integer lists additionally accept inclusive `lo..hi` ranges, so ten
/// seeds are `1..10` rather than a comma litany.
fn parse_u64_list(entry: Option<(usize, String)>, key: &str) -> Result<Vec<u64>, ConfigError> {
    let Some((line, v)) = entry else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, hi)) = item.split_once("..") {
            let parse = |s: &str| -> Result<u64, ConfigError> {
                s.trim().parse().map_err(|_| ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    reason: format!("cannot parse range bound {s:?}"),
                })
            };
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    reason: format!("empty range {item:?}"),
                });
            }
            out.extend(lo..=hi);
        } else {
            out.push(item.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.to_string(),
                reason: format!("cannot parse list item {item:?}"),
            })?);
        }
    }
    Ok(out)
}

/// Everything a `run` or `sweep` command needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub out: Option<PathBuf>,
    pub sweep: SweepAxes,
}

#[derive(Debug, Clone, Default)]
pub struct SweepAxes {
    pub n_nodes: Vec<usize>,
    pub density_pct: Vec<f64>,
    pub update_interval: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn sweep_spec(&self) -> Result<SweepSpec, ConfigError> {
        if self.sweep.seeds.is_empty() {
            return Err(ConfigError::Missing {
                section: "sweep".into(),
                key: "seeds".into(),
            });
        }
        Ok(SweepSpec {
            base: self.scenario.clone(),
            n_nodes: self.sweep.n_nodes.clone(),
            density_pct: self.sweep.density_pct.clone(),
            update_interval: self.sweep.update_interval.clone(),
            seeds: self.sweep.seeds.clone(),
        })
    }
}

/// Parses a config file body. Relative dataset paths resolve against
/// `base_dir` (normally the config file's directory).
pub fn load_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let mut p = parse_text(text)?;

    // [dataset]
    let kind = match p.take("dataset", "kind") {
        Some((_, v)) => v,
        None => "generated".to_string(),
    };
    let dataset = match kind.as_str() {
        "generated" => {
            let n = match p.take("dataset", "n") {
                Some((line, v)) => v.parse().map_err(|_| ConfigError::BadValue {
                    line,
                    key: "n".into(),
                    reason: format!("cannot parse {v:?}"),
                })?,
                None => {
                    return Err(ConfigError::Missing {
                        section: "dataset".into(),
                        key: "n".into(),
                    })
                }
            };
            DatasetSpec::Generated {
                n,
                low: parse_as(p.take("dataset", "min"), "min", -100.0)?,
                high: parse_as(p.take("dataset", "max"), "max", 100.0)?,
                dim: parse_as(p.take("dataset", "dim"), "dim", 2)?,
                seed: parse_as(p.take("dataset", "seed"), "seed", 1)?,
            }
        }
        "file" => {
            let Some((_, path)) = p.take("dataset", "path") else {
                return Err(ConfigError::Missing {
                    section: "dataset".into(),
                    key: "path".into(),
                });
            };
            let path = PathBuf::from(path);
            let path = if path.is_absolute() {
                path
            } else {
                base_dir.join(path)
            };
            DatasetSpec::File { path }
        }
        other => {
            return Err(ConfigError::BadValue {
                line: 0,
                key: "kind".into(),
                reason: format!("expected generated or file, got {other:?}"),
            })
        }
    };

    // [run]
    let seed = parse_as(p.take("run", "seed"), "seed", 1u64)?;
    let scenario_id = match p.take("run", "scenario_id") {
        Some((_, v)) => v,
        None => "run".to_string(),
    };
    let mut scenario = Scenario::new(scenario_id, dataset, seed);
    scenario.density_pct = parse_as(p.take("run", "density_pct"), "density_pct", 10.0)?;
    scenario.groups = parse_as(p.take("run", "groups"), "groups", 1u32)?;
    scenario.update_interval = parse_as(
        p.take("run", "update_interval"),
        "update_interval",
        0.0f64,
    )?;
    scenario.query_fraction =
        parse_as(p.take("run", "query_fraction"), "query_fraction", 0.1)?;
    if let Some(entry) = p.take("run", "offsets_ms") {
        scenario.offsets_ms = parse_list::<f64>(Some(entry), "offsets_ms")?;
    }
    scenario.use_original_d = parse_as(
        p.take("run", "use_original_d"),
        "use_original_d",
        false,
    )?;
    scenario.mode = match p.take("run", "mode") {
        None => Mode::Synchronous,
        Some((line, v)) => match v.as_str() {
            "synchronous" => Mode::Synchronous,
            "asynchronous" => Mode::Asynchronous,
            "offset_sweep" => Mode::OffsetSweep,
            other => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "mode".into(),
                    reason: format!(
                        "expected synchronous, asynchronous or offset_sweep, got {other:?}"
                    ),
                })
            }
        },
    };

    // [overlay]
    scenario.bloom_bits = parse_as(p.take("overlay", "bloom_m"), "bloom_m", scenario.bloom_bits)?;
    scenario.bloom_hashes = parse_as(
        p.take("overlay", "bloom_k"),
        "bloom_k",
        scenario.bloom_hashes,
    )?;
    scenario.curve_order = parse_as(
        p.take("overlay", "curve_order"),
        "curve_order",
        scenario.curve_order,
    )?;
    scenario.curve_kind = match p.take("overlay", "curve") {
        None => CurveKind::Moore,
        Some((line, v)) => match v.as_str() {
            "moore" => CurveKind::Moore,
            "hilbert" => CurveKind::Hilbert,
            other => {
                return Err(ConfigError::BadValue {
                    line,
                    key: "curve".into(),
                    reason: format!("unknown curve kind {other:?}"),
                })
            }
        },
    };

    // [output]
    let out = p.take("output", "out").map(|(_, v)| {
        let path = PathBuf::from(v);
        if path.is_absolute() {
            path
        } else {
            base_dir.join(path)
        }
    });

    // [sweep]
    let sweep = SweepAxes {
        n_nodes: parse_list(p.take("sweep", "n_nodes"), "n_nodes")?,
        density_pct: parse_list(p.take("sweep", "density_pct"), "density_pct")?,
        update_interval: parse_list(p.take("sweep", "update_interval"), "update_interval")?,
        seeds: parse_u64_list(p.take("sweep", "seeds"), "seeds")?,
    };

    p.reject_leftovers()?;
    Ok(RunConfig {
        scenario,
        out,
        sweep,
    })
}

pub fn load_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        line: 0,
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_config(&text, base)
}
