//! Binary model checkpoints.
//!
//! Layout (u32 little-endian integers, f64 little-endian floats):
//!
//! ```text
//! "MAPSCKPT"  magic, 8 bytes
//! version     currently 1
//! kind        0 = maps, 1 = single, 2 = mt, 3 = mtmh
//! task        owning task for `single` checkpoints, 0xFFFF_FFFF otherwise
//! config      u32 byte length + canonical TOML of the training config
//! num_tasks  state_dim  action_dim
//! payload     kind maps:  num_modules, feature_dim, then M module MLPs,
//!             the selector MLP, and the head MLP
//!             baselines:  one MLP
//! ```
//!
//! Each MLP is its layer-size list (count + sizes), then per layer a weight
//! tensor and a bias tensor, each prefixed by rank and dimensions. The
//! redundancy is deliberate: the loader cross-checks every tensor shape
//! against both the size list and the echoed config, so a checkpoint
//! produced by a different configuration is rejected instead of silently
//! reinterpreted.

use crate::config::ConfigFile;
use crate::demo_file::{get_f64s, get_u32, read_exact};
use crate::{io_err, CliError, Result};
use maps_core::nn::MlpParams;
use maps_core::policy::MapsModel;
use maps_core::trainer::BaselineKind;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"MAPSCKPT";
pub const VERSION: u32 = 1;
const NO_TASK: u32 = u32::MAX;

/// Checkpoint kind tag, mirroring the `--method` flag values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Maps,
    Single,
    Mt,
    Mtmh,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Maps => "maps",
            Kind::Single => "single",
            Kind::Mt => "mt",
            Kind::Mtmh => "mtmh",
        }
    }

    fn tag(&self) -> u32 {
        match self {
            Kind::Maps => 0,
            Kind::Single => 1,
            Kind::Mt => 2,
            Kind::Mtmh => 3,
        }
    }

    fn from_tag(tag: u32) -> Option<Kind> {
        match tag {
            0 => Some(Kind::Maps),
            1 => Some(Kind::Single),
            2 => Some(Kind::Mt),
            3 => Some(Kind::Mtmh),
            _ => None,
        }
    }

    pub fn baseline(&self) -> Option<BaselineKind> {
        match self {
            Kind::Maps => None,
            Kind::Single => Some(BaselineKind::SingleTask),
            Kind::Mt => Some(BaselineKind::MultiTaskOneHot),
            Kind::Mtmh => Some(BaselineKind::MultiTaskMultiHead),
        }
    }
}

/// A loaded checkpoint, already shape-checked against its embedded config.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Maps {
        config: ConfigFile,
        model: MapsModel,
    },
    Baseline {
        kind: Kind,
        /// Which task a `single` checkpoint belongs to.
        task: Option<usize>,
        config: ConfigFile,
        model: MlpParams,
        num_tasks: usize,
        state_dim: usize,
        action_dim: usize,
    },
}

impl Checkpoint {
    pub fn kind(&self) -> Kind {
        match self {
            Checkpoint::Maps { .. } => Kind::Maps,
            Checkpoint::Baseline { kind, .. } => *kind,
        }
    }

    pub fn config(&self) -> &ConfigFile {
        match self {
            Checkpoint::Maps { config, .. } => config,
            Checkpoint::Baseline { config, .. } => config,
        }
    }
}

pub fn write_maps(path: &Path, config: &ConfigFile, model: &MapsModel) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e| io_err(path, e);

    header(
        &mut w,
        Kind::Maps,
        NO_TASK,
        config,
        model.num_tasks,
        model.state_dim,
        model.action_dim,
    )
    .map_err(wrap)?;
    put_u32(&mut w, model.num_modules() as u32).map_err(wrap)?;
    put_u32(&mut w, model.feature_dim as u32).map_err(wrap)?;
    for module in &model.modules {
        put_mlp(&mut w, module).map_err(wrap)?;
    }
    put_mlp(&mut w, &model.selector).map_err(wrap)?;
    put_mlp(&mut w, &model.head).map_err(wrap)?;
    w.flush().map_err(wrap)
}

pub fn write_baseline(
    path: &Path,
    config: &ConfigFile,
    kind: Kind,
    task: Option<usize>,
    num_tasks: usize,
    state_dim: usize,
    action_dim: usize,
    model: &MlpParams,
) -> Result<()> {
    if kind == Kind::Maps {
        return Err(CliError::Usage(
            "write_baseline cannot write a maps checkpoint".into(),
        ));
    }
    if (kind == Kind::Single) != task.is_some() {
        return Err(CliError::Usage(
            "task index is required for single checkpoints and only those".into(),
        ));
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e| io_err(path, e);

    let task_tag = task.map_or(NO_TASK, |t| t as u32);
    header(&mut w, kind, task_tag, config, num_tasks, state_dim, action_dim).map_err(wrap)?;
    put_mlp(&mut w, model).map_err(wrap)?;
    w.flush().map_err(wrap)
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != MAGIC {
        return Err(CliError::Format(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = get_u32(&mut r, path, "version")?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let tag = get_u32(&mut r, path, "kind tag")?;
    let kind = Kind::from_tag(tag).ok_or_else(|| {
        CliError::Format(format!("{}: unknown checkpoint kind tag {tag}", path.display()))
    })?;
    let task_tag = get_u32(&mut r, path, "task index")?;
    let config_len = get_u32(&mut r, path, "config length")? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact(&mut r, &mut config_bytes, path, "config echo")?;
    let config_text = String::from_utf8(config_bytes).map_err(|_| {
        CliError::Format(format!("{}: config echo is not UTF-8", path.display()))
    })?;
    let config = crate::config::parse_config(&config_text).map_err(|e| {
        CliError::Format(format!("{}: embedded config invalid: {e}", path.display()))
    })?;
    let num_tasks = get_u32(&mut r, path, "num_tasks")? as usize;
    let state_dim = get_u32(&mut r, path, "state_dim")? as usize;
    let action_dim = get_u32(&mut r, path, "action_dim")? as usize;
    if num_tasks == 0 || state_dim == 0 || action_dim == 0 {
        return Err(CliError::Format(format!(
            "{}: zero dimension in header",
            path.display()
        )));
    }

    let ckpt = match kind {
        Kind::Maps => {
            if task_tag != NO_TASK {
                return Err(CliError::Format(format!(
                    "{}: maps checkpoint carries a task index",
                    path.display()
                )));
            }
            let num_modules = get_u32(&mut r, path, "num_modules")? as usize;
            let feature_dim = get_u32(&mut r, path, "feature_dim")? as usize;
            if num_modules != config.num_modules || feature_dim != config.feature_dim {
                return Err(CliError::Format(format!(
                    "{}: header modules/features ({num_modules}, {feature_dim}) disagree with \
                     embedded config ({}, {})",
                    path.display(),
                    config.num_modules,
                    config.feature_dim
                )));
            }

            let mut module_sizes = vec![state_dim];
            module_sizes.extend_from_slice(&config.module_hidden);
            module_sizes.push(feature_dim);
            let mut selector_sizes = vec![state_dim + num_tasks];
            selector_sizes.extend_from_slice(&config.selector_hidden);
            selector_sizes.push(num_modules);
            let head_sizes = vec![num_modules * feature_dim, action_dim];

            let modules = (0..num_modules)
                .map(|i| get_mlp(&mut r, path, &module_sizes, &format!("module {i}")))
                .collect::<Result<Vec<_>>>()?;
            let selector = get_mlp(&mut r, path, &selector_sizes, "selector")?;
            let head = get_mlp(&mut r, path, &head_sizes, "head")?;
            Checkpoint::Maps {
                config,
                model: MapsModel {
                    modules,
                    selector,
                    head,
                    state_dim,
                    action_dim,
                    num_tasks,
                    feature_dim,
                },
            }
        }
        _ => {
            let task = if kind == Kind::Single {
                let t = task_tag as usize;
                if task_tag == NO_TASK || t >= num_tasks {
                    return Err(CliError::Format(format!(
                        "{}: single checkpoint task index {task_tag} out of range for {num_tasks} tasks",
                        path.display()
                    )));
                }
                Some(t)
            } else {
                if task_tag != NO_TASK {
                    return Err(CliError::Format(format!(
                        "{}: {} checkpoint carries a task index",
                        path.display(),
                        kind.name()
                    )));
                }
                None
            };
            let (input, output) = match kind {
                Kind::Single => (state_dim, action_dim),
                Kind::Mt => (state_dim + num_tasks, action_dim),
                Kind::Mtmh => (state_dim, num_tasks * action_dim),
                Kind::Maps => unreachable!(),
            };
            let mut sizes = vec![input];
            sizes.extend_from_slice(&config.module_hidden);
            sizes.push(output);
            let model = get_mlp(&mut r, path, &sizes, "baseline network")?;
            Checkpoint::Baseline {
                kind,
                task,
                config,
                model,
                num_tasks,
                state_dim,
                action_dim,
            }
        }
    };

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => Ok(ckpt),
        Ok(_) => Err(CliError::Format(format!(
            "{}: trailing bytes after declared payload",
            path.display()
        ))),
        Err(e) => Err(io_err(path, e)),
    }
}

fn header<W: Write>(
    w: &mut W,
    kind: Kind,
    task_tag: u32,
    config: &ConfigFile,
    num_tasks: usize,
    state_dim: usize,
    action_dim: usize,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, kind.tag())?;
    put_u32(w, task_tag)?;
    let toml = config.canonical_toml();
    put_u32(w, toml.len() as u32)?;
    w.write_all(toml.as_bytes())?;
    put_u32(w, num_tasks as u32)?;
    put_u32(w, state_dim as u32)?;
    put_u32(w, action_dim as u32)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_mlp<W: Write>(w: &mut W, mlp: &MlpParams) -> std::io::Result<()> {
    put_u32(w, mlp.layer_sizes.len() as u32)?;
    for &s in &mlp.layer_sizes {
        put_u32(w, s as u32)?;
    }
    for (i, (wt, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let (rows, cols) = (mlp.layer_sizes[i + 1], mlp.layer_sizes[i]);
        put_u32(w, 2)?;
        put_u32(w, rows as u32)?;
        put_u32(w, cols as u32)?;
        for &v in wt {
            w.write_all(&v.to_le_bytes())?;
        }
        put_u32(w, 1)?;
        put_u32(w, rows as u32)?;
        for &v in b {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn get_mlp<R: Read>(
    r: &mut R,
    path: &Path,
    expected_sizes: &[usize],
    what: &str,
) -> Result<MlpParams> {
    let n = get_u32(r, path, "layer count")? as usize;
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        sizes.push(get_u32(r, path, "layer size")? as usize);
    }
    if sizes != expected_sizes {
        return Err(CliError::Format(format!(
            "{}: {what} has layers {sizes:?}, but the embedded config implies {expected_sizes:?}",
            path.display()
        )));
    }
    let mut weights = Vec::with_capacity(n.saturating_sub(1));
    let mut biases = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n.saturating_sub(1) {
        let (rows, cols) = (sizes[i + 1], sizes[i]);
        expect_shape(r, path, what, &[rows, cols])?;
        weights.push(get_f64s(r, rows * cols, path)?);
        expect_shape(r, path, what, &[rows])?;
        biases.push(get_f64s(r, rows, path)?);
    }
    Ok(MlpParams {
        layer_sizes: sizes,
        weights,
        biases,
    })
}

fn expect_shape<R: Read>(r: &mut R, path: &Path, what: &str, dims: &[usize]) -> Result<()> {
    let rank = get_u32(r, path, "tensor rank")? as usize;
    let mut got = Vec::with_capacity(rank);
    for _ in 0..rank {
        got.push(get_u32(r, path, "tensor dim")? as usize);
    }
    if got != dims {
        return Err(CliError::Format(format!(
            "{}: {what} tensor shaped {got:?}, expected {dims:?}",
            path.display()
        )));
    }
    Ok(())
}
