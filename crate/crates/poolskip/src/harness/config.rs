//! Line-oriented `key = value` experiment configuration with `#` comments
//! and `[section]` headers. Unknown keys and duplicate keys are errors; a
//! parse returns either a fully validated config or every problem found,
//! each tied to its line number.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::error::ConfigError;
use crate::harness::model::{infer_shapes, LayerSpec};
use crate::pool_skip::PoolSkipVariant;

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        samples: usize,
        extent: usize,
        channels: usize,
        noise: f64,
        seed: u64,
    },
    Cifar { path: PathBuf, limit: Option<usize> },
}

/// Fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub layers: Vec<LayerSpec>,
    pub bias_offset: f64,
    pub init_gain: f64,
    pub batchnorm: bool,
    pub data: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seeds: Vec<u64>,
    pub snapshot_interval: usize,
    pub inertia_k: usize,
    pub output_dir: PathBuf,
    /// Original text, hashed into the run manifest.
    pub raw_text: String,
}

impl ExperimentConfig {
    /// Input `(channels, height, width)` of the model.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match &self.data {
            DataSource::Synthetic { channels, extent, .. } => (*channels, *extent, *extent),
            DataSource::Cifar { .. } => (3, 32, 32),
        }
    }

    pub fn classes(&self) -> usize {
        match &self.data {
            DataSource::Synthetic { classes, .. } => *classes,
            DataSource::Cifar { .. } => 10,
        }
    }

    /// FNV-1a hash of the config text, recorded in the run manifest.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.raw_text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

struct RawEntry {
    line: usize,
    value: String,
}

/// Reads and parses a config file, folding all problems into one error.
pub fn load_config(path: &std::path::Path) -> crate::error::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(crate::error::Error::Config)
}

/// Parses and validates a config document. All detected problems are
/// returned together, each naming its line.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut entries: HashMap<(String, String), RawEntry> = HashMap::new();
    let mut section = String::new();
    let mut seen_sections: Vec<String> = Vec::new();

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => {
                    section = name.trim().to_string();
                    if !KNOWN_SECTIONS.contains(&section.as_str()) {
                        errors.push(ConfigError::new(
                            lineno,
                            format!("unknown section `[{section}]`"),
                        ));
                    }
                    seen_sections.push(section.clone());
                }
                _ => errors.push(ConfigError::new(lineno, "malformed section header")),
            }
            continue;
        }
        let Some(eq) = line.find('=') else {
            errors.push(ConfigError::new(lineno, "expected `key = value`"));
            continue;
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            errors.push(ConfigError::new(lineno, "empty key"));
            continue;
        }
        if section.is_empty() {
            errors.push(ConfigError::new(
                lineno,
                format!("key `{key}` outside any section"),
            ));
            continue;
        }
        if !known_key(&section, &key) && KNOWN_SECTIONS.contains(&section.as_str()) {
            errors.push(ConfigError::new(
                lineno,
                format!("unknown key `{key}` in section `[{section}]`"),
            ));
            continue;
        }
        match entries.entry((section.clone(), key.clone())) {
            std::collections::hash_map::Entry::Occupied(prev) => {
                errors.push(ConfigError::new(
                    lineno,
                    format!(
                        "duplicate key `{key}` in `[{section}]` (first defined on line {})",
                        prev.get().line
                    ),
                ));
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert(RawEntry { line: lineno, value });
            }
        }
    }

    let cfg = build_config(text, &entries, &mut errors);
    match cfg {
        Some(cfg) if errors.is_empty() => Ok(cfg),
        _ => Err(errors)
    }
}

const KNOWN_SECTIONS: [&str; 4] = ["model", "data", "train", "output"];

const KNOWN_KEYS: [(&str, &str); 22] = [
    ("model", "layers"),
    ("model", "bias_offset"),
    ("model", "init_gain"),
    ("model", "batchnorm"),
    ("data", "source"),
    ("data", "path"),
    ("data", "classes"),
    ("data", "samples"),
    ("data", "extent"),
    ("data", "channels"),
    ("data", "noise"),
    ("data", "seed"),
    ("data", "limit"),
    ("train", "epochs"),
    ("train", "batch_size"),
    ("train", "lr"),
    ("train", "lr_decay"),
    ("train", "decay_every"),
    ("train", "seeds"),
    ("train", "snapshot_interval"),
    ("train", "inertia_k"),
    ("output", "dir"),
];

fn known_key(section: &str, key: &str) -> bool {
    KNOWN_KEYS.contains(&(section, key))
}

fn build_config(
    text: &str,
    entries: &HashMap<(String, String), RawEntry>,
    errors: &mut Vec<ConfigError>,
) -> Option<ExperimentConfig> {
    let get = |section: &str, key: &str| entries.get(&(section.to_string(), key.to_string()));

    macro_rules! parse_or {
        ($section:expr, $key:expr, $default:expr, $ty:ty) => {
            match get($section, $key) {
                Some(e) => match e.value.parse::<$ty>() {
                    Ok(v) => v,
                    Err(_) => {
                        errors.push(ConfigError::new(
                            e.line,
                            format!("cannot parse `{}` as {}", e.value, stringify!($ty)),
                        ));
                        $default
                    }
                },
                None => $default,
            }
        };
    }

    // [model]
    let layers_entry = get("model", "layers");
    let layers = match layers_entry {
        Some(e) => match parse_layers(&e.value) {
            Ok(items) => items,
            Err(msg) => {
                errors.push(ConfigError::new(e.line, msg));
                Vec::new()
            }
        },
        None => {
            errors.push(ConfigError::new(0, "missing required key `layers` in `[model]`"));
            Vec::new()
        }
    };
    let bias_offset = parse_or!("model", "bias_offset", 0.0, f64);
    let init_gain = parse_or!("model", "init_gain", 1.0, f64);
    if !(init_gain > 0.0) {
        errors.push(ConfigError::new(
            get("model", "init_gain").map(|e| e.line).unwrap_or(0),
            "init_gain must be positive",
        ));
    }
    let batchnorm = parse_or!("model", "batchnorm", false, bool);

    // [data]
    let source = get("data", "source").map(|e| e.value.as_str()).unwrap_or("synthetic");
    let data = match source {
        "synthetic" => {
            let classes = parse_or!("data", "classes", 4, usize);
            let samples = parse_or!("data", "samples", 512, usize);
            let extent = parse_or!("data", "extent", 12, usize);
            let channels = parse_or!("data", "channels", 1, usize);
            let noise = parse_or!("data", "noise", crate::harness::data::DEFAULT_NOISE, f64);
            let seed = parse_or!("data", "seed", 7777, u64);
            if classes < 2 {
                errors.push(ConfigError::new(
                    get("data", "classes").map(|e| e.line).unwrap_or(0),
                    "need at least 2 classes",
                ));
            }
            if samples < classes {
                errors.push(ConfigError::new(
                    get("data", "samples").map(|e| e.line).unwrap_or(0),
                    "need at least one sample per class",
                ));
            }
            if let Some(e) = get("data", "path") {
                errors.push(ConfigError::new(e.line, "`path` only applies to source = cifar"));
            }
            DataSource::Synthetic { classes, samples, extent, channels, noise, seed }
        }
        "cifar" => {
            let path = match get("data", "path") {
                Some(e) => PathBuf::from(&e.value),
                None => {
                    errors.push(ConfigError::new(0, "source = cifar requires `path`"));
                    PathBuf::new()
                }
            };
            let limit = get("data", "limit").and_then(|e| e.value.parse::<usize>().ok());
            DataSource::Cifar { path, limit }
        }
        other => {
            errors.push(ConfigError::new(
                get("data", "source").map(|e| e.line).unwrap_or(0),
                format!("unknown data source `{other}` (expected synthetic or cifar)"),
            ));
            DataSource::Synthetic {
                classes: 4,
                samples: 512,
                extent: 12,
                channels: 1,
                noise: crate::harness::data::DEFAULT_NOISE,
                seed: 7777,
            }
        }
    };

    // [train]
    let epochs = parse_or!("train", "epochs", 3, usize);
    let batch_size = parse_or!("train", "batch_size", 16, usize);
    let lr = parse_or!("train", "lr", 0.05, f64);
    let lr_decay = parse_or!("train", "lr_decay", 1.0, f64);
    let decay_every = parse_or!("train", "decay_every", 1, usize);
    let snapshot_interval = parse_or!("train", "snapshot_interval", 50, usize);
    let inertia_k = parse_or!("train", "inertia_k", 10, usize);
    let seeds = match get("train", "seeds") {
        Some(e) => {
            let mut seeds = Vec::new();
            for part in e.value.split(',') {
                match part.trim().parse::<u64>() {
                    Ok(s) => seeds.push(s),
                    Err(_) => errors.push(ConfigError::new(
                        e.line,
                        format!("cannot parse seed `{}`", part.trim()),
                    )),
                }
            }
            if seeds.is_empty() {
                errors.push(ConfigError::new(e.line, "seed list must be non-empty"));
            }
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                errors.push(ConfigError::new(e.line, "seed list contains duplicates"));
            }
            seeds
        }
        None => vec![1],
    };

    for (cond, line, msg) in [
        (epochs == 0, get("train", "epochs").map(|e| e.line), "epochs must be >= 1"),
        (batch_size == 0, get("train", "batch_size").map(|e| e.line), "batch_size must be >= 1"),
        (!(lr > 0.0), get("train", "lr").map(|e| e.line), "lr must be positive"),
        (
            !(lr_decay > 0.0 && lr_decay <= 1.0),
            get("train", "lr_decay").map(|e| e.line),
            "lr_decay must lie in (0, 1]",
        ),
        (decay_every == 0, get("train", "decay_every").map(|e| e.line), "decay_every must be >= 1"),
        (
            snapshot_interval == 0,
            get("train", "snapshot_interval").map(|e| e.line),
            "snapshot_interval must be >= 1",
        ),
        (inertia_k == 0, get("train", "inertia_k").map(|e| e.line), "inertia_k must be >= 1"),
    ] {
        if cond {
            errors.push(ConfigError::new(line.unwrap_or(0), msg));
        }
    }

    // [output]
    let output_dir = PathBuf::from(
        get("output", "dir").map(|e| e.value.clone()).unwrap_or_else(|| "runs/out".into()),
    );

    let cfg = ExperimentConfig {
        layers,
        bias_offset,
        init_gain,
        batchnorm,
        data,
        epochs,
        batch_size,
        lr,
        lr_decay,
        decay_every,
        seeds,
        snapshot_interval,
        inertia_k,
        output_dir,
        raw_text: text.to_string(),
    };

    // Static shape validation of the whole model against the data extents.
    if !cfg.layers.is_empty() {
        match infer_shapes(&cfg.layers, cfg.input_shape()) {
            Ok(shapes) => {
                if let Some(LayerSpec::Linear { out }) = cfg.layers.last() {
                    if *out != cfg.classes() {
                        errors.push(ConfigError::new(
                            layers_entry.map(|e| e.line).unwrap_or(0),
                            format!(
                                "classifier outputs {out} classes but the dataset has {}",
                                cfg.classes()
                            ),
                        ));
                    }
                }
                let _ = shapes;
            }
            Err(msg) => {
                errors.push(ConfigError::new(
                    layers_entry.map(|e| e.line).unwrap_or(0),
                    msg,
                ));
            }
        }
    }

    Some(cfg)
}

/// Grammar of the `layers` value: comma-separated items, each
/// `conv <out> <kernel> [ps <variant> <e>]` or `linear <classes>`.
/// Variants: full, pool-skip, conv-skip, pool-conv.
fn parse_layers(value: &str) -> std::result::Result<Vec<LayerSpec>, String> {
    let mut items = Vec::new();
    for (n, item) in value.split(',').enumerate() {
        let tokens: Vec<&str> = item.split_whitespace().collect();
        let at = n + 1;
        match tokens.as_slice() {
            ["conv", out, kernel, rest @ ..] => {
                let (bias, rest) = match rest {
                    ["b", off, tail @ ..] => (
                        Some(off.parse::<f64>().map_err(|_| {
                            format!("item {at}: invalid bias offset `{off}`")
                        })?),
                        tail,
                    ),
                    _ => (None, rest),
                };
                let pool_skip = match rest {
                    [] => None,
                    ["ps", variant, e] => {
                        Some((parse_variant(variant, at)?, parse_tok(e, at, "pool size")?))
                    }
                    other => {
                        return Err(format!(
                            "item {at}: unexpected tokens `{}` after conv",
                            other.join(" ")
                        ))
                    }
                };
                items.push(LayerSpec::Conv {
                    out: parse_tok(out, at, "out channels")?,
                    kernel: parse_tok(kernel, at, "kernel extent")?,
                    bias,
                    pool_skip,
                });
            }
            ["linear", out] => items.push(LayerSpec::Linear {
                out: parse_tok(out, at, "classifier outputs")?,
            }),
            [] => return Err(format!("item {at}: empty layer item")),
            other => {
                return Err(format!(
                    "item {at}: cannot parse layer `{}` (expected `conv OUT K [ps VARIANT E]` or `linear K`)",
                    other.join(" ")
                ))
            }
        }
    }
    Ok(items)
}

fn parse_tok(tok: &str, item: usize, what: &str) -> std::result::Result<usize, String> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v >= 1)
        .ok_or_else(|| format!("item {item}: invalid {what} `{tok}`"))
}

fn parse_variant(tok: &str, item: usize) -> std::result::Result<PoolSkipVariant, String> {
    match tok {
        "full" => Ok(PoolSkipVariant::Full),
        "pool-skip" => Ok(PoolSkipVariant::PoolSkipOnly),
        "conv-skip" => Ok(PoolSkipVariant::ConvSkipOnly),
        "pool-conv" => Ok(PoolSkipVariant::PoolConvOnly),
        other => Err(format!(
            "item {item}: unknown Pool Skip variant `{other}` (expected full, pool-skip, conv-skip or pool-conv)"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[model]
layers = conv 4 3, conv 4 3, linear 4

[data]
source = synthetic

[train]
seeds = 1
";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.layers.len(), 3);
        assert_eq!(cfg.seeds, vec![1]);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.classes(), 4);
        assert!(!cfg.batchnorm);
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let text = "[train]\nlr = 0.1\nlr = 0.2\n";
        let errs = parse_config(text).unwrap_err();
        let dup = errs.iter().find(|e| e.message.contains("duplicate")).unwrap();
        assert_eq!(dup.line, 3);
        assert!(dup.message.contains("line 2"), "{}", dup.message);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = "[model]\nlayers = conv 2 3, linear 4\nlayer_size = 5\n";
        let errs = parse_config(text).unwrap_err();
        assert!(errs.iter().any(|e| e.line == 3 && e.message.contains("unknown key")));
    }

    #[test]
    fn pool_size_static_rejection_lists_conditions() {
        // 8x8 feature map with M = 3: e = 3 divides 6 but not 8.
        let text = "\
[model]
layers = conv 4 3 ps full 3, linear 4

[data]
extent = 8
";
        let errs = parse_config(text).unwrap_err();
        let shape_err = errs.iter().find(|e| e.message.contains("pool size")).unwrap();
        assert_eq!(shape_err.line, 2);
        assert!(shape_err.message.contains("e does not divide H"), "{}", shape_err.message);
        assert!(shape_err.message.contains("e does not divide W"), "{}", shape_err.message);
        assert!(!shape_err.message.contains("H-M+1"), "{}", shape_err.message);
    }

    #[test]
    fn insertion_point_is_structural() {
        // `ps` only attaches to a conv item; a free-standing item is rejected.
        let text = "[model]\nlayers = conv 4 3, ps full 2, linear 4\n";
        let errs = parse_config(text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("cannot parse layer")));
    }

    #[test]
    fn classifier_must_match_classes() {
        let text = "\
[model]
layers = conv 4 3, linear 7

[data]
classes = 4
";
        let errs = parse_config(text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("7 classes")), "{errs:?}");
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "\
# header comment
[model]
layers = conv 2 3, linear 4   # trailing comment

[train]
seeds = 1, 2
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn key_outside_section_rejected() {
        let text = "lr = 0.5\n[model]\nlayers = conv 2 3, linear 4\n";
        let errs = parse_config(text).unwrap_err();
        assert!(errs.iter().any(|e| e.line == 1 && e.message.contains("outside")));
    }

    #[test]
    fn content_hash_is_stable() {
        let cfg1 = parse_config(MINIMAL).unwrap();
        let cfg2 = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg1.content_hash(), cfg2.content_hash());
        let other = parse_config(&MINIMAL.replace("conv 4 3, conv 4 3", "conv 4 3")).unwrap();
        assert_ne!(cfg1.content_hash(), other.content_hash());
    }
}
