//! Flat `key = value` configuration with command-line overrides.
//!
//! Lines starting with `#` are comments. Relative paths in a config file are
//! resolved against the file's directory; paths given as flags against the
//! working directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmdkit::dmd::{BFit, DmdOptions, DEFAULT_FIT_SNAPSHOTS};
use dmdkit::linalg::SvdMode;
use dmdkit::modal::{CLUSTER_BANDWIDTH, CLUSTER_LEVEL_FRACTION, DEFAULT_TRIALS, PERSISTENCE_FACTOR, ROBUSTNESS_BANDWIDTH};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RomSpec {
    All,
    Ranks(Vec<usize>),
    Criteria {
        rms_min: Option<f64>,
        rms_max: Option<f64>,
        robustness_min: Option<f64>,
        robustness_max: Option<f64>,
        persistent: bool,
    },
}

impl RomSpec {
    fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s == "all" {
            return Ok(RomSpec::All);
        }
        if let Some(list) = s.strip_prefix("ranks:") {
            return Ok(RomSpec::Ranks(parse_list(list, "ROM ranks")?));
        }
        if let Some(body) = s.strip_prefix("criteria:") {
            let (mut rms_min, mut rms_max, mut robustness_min, mut robustness_max) = (None, None, None, None);
            let mut persistent = false;
            for item in body.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                if item == "persistent" {
                    persistent = true;
                    continue;
                }
                let (k, v) = item.split_once('=').ok_or_else(|| bad(format!("bad ROM criterion {item:?}")))?;
                let v = Some(parse_f64(v, k)?);
                match k.trim() {
                    "rms_min" => rms_min = v,
                    "rms_max" => rms_max = v,
                    "robust_min" => robustness_min = v,
                    "robust_max" => robustness_max = v,
                    other => return Err(bad(format!("unknown ROM criterion {other:?}"))),
                }
            }
            return Ok(RomSpec::Criteria { rms_min, rms_max, robustness_min, robustness_max, persistent });
        }
        Err(bad(format!("ROM selection must be all, ranks:<list> or criteria:<list>, got {s:?}")))
    }

    pub fn needs_robustness(&self) -> bool {
        matches!(self, RomSpec::Criteria { robustness_min, robustness_max, .. }
            if robustness_min.is_some() || robustness_max.is_some())
    }

    fn render(&self) -> String {
        match self {
            RomSpec::All => "all".into(),
            RomSpec::Ranks(r) => format!("ranks:{}", join(r)),
            RomSpec::Criteria { rms_min, rms_max, robustness_min, robustness_max, persistent } => {
                let mut parts = Vec::new();
                for (name, v) in
                    [("rms_min", rms_min), ("rms_max", rms_max), ("robust_min", robustness_min), ("robust_max", robustness_max)]
                {
                    if let Some(v) = v {
                        parts.push(format!("{name}={v:e}"));
                    }
                }
                if *persistent {
                    parts.push("persistent".into());
                }
                format!("criteria:{}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthProfile {
    Orthogonalized,
    Random,
    Ramp(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMode {
    pub sigma: f64,
    pub omega: f64,
    pub b: (f64, f64),
    pub profile: SynthProfile,
}

impl SynthMode {
    fn parse(s: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() < 4 || parts.len() > 5 {
            return Err(bad(format!("synthetic mode needs sigma,omega,b_re,b_im[,profile], got {s:?}")));
        }
        let profile = match parts.get(4).copied().unwrap_or("orthogonalized") {
            "orthogonalized" => SynthProfile::Orthogonalized,
            "random" => SynthProfile::Random,
            p => match p.strip_prefix("ramp:") {
                Some(slope) => SynthProfile::Ramp(parse_f64(slope, "ramp slope")?),
                None => return Err(bad(format!("unknown profile {p:?}"))),
            },
        };
        Ok(SynthMode {
            sigma: parse_f64(parts[0], "sigma")?,
            omega: parse_f64(parts[1], "omega")?,
            b: (parse_f64(parts[2], "b_re")?, parse_f64(parts[3], "b_im")?),
            profile,
        })
    }

    fn render(&self) -> String {
        let p = match self.profile {
            SynthProfile::Orthogonalized => "orthogonalized".to_string(),
            SynthProfile::Random => "random".to_string(),
            SynthProfile::Ramp(s) => format!("ramp:{s:e}"),
        };
        format!("{:e},{:e},{:e},{:e},{p}", self.sigma, self.omega, self.b.0, self.b.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub tidal: bool,
    pub dim: usize,
    pub snapshots: usize,
    pub dt: f64,
    pub noise: f64,
    pub name: String,
    /// `(nx, ny, nz)`; the oracle then lives on a velocity grid with `D = 4·cells`.
    pub grid: Option<(usize, usize, usize)>,
    /// Water columns `(i, j)` masked at every depth.
    pub land: Vec<(usize, usize)>,
    pub modes: Vec<SynthMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SliceShape {
    Layer(usize),
    Section(Vec<(usize, usize)>),
    Bottom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceConfig {
    pub modes: Vec<usize>,
    pub shape: SliceShape,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// `None` picks `min(numerical rank, N − 4)`.
    pub rank: Option<usize>,
    pub tlsq: bool,
    pub tlsq_rank: Option<usize>,
    pub normalize: bool,
    pub mean_removal: bool,
    pub bfit: BFit,
    pub svd: SvdMode,
    pub loo_trials: usize,
    pub h_robust: f64,
    pub h_cluster: f64,
    pub cluster_level: f64,
    /// Hours; `None` means `(N − 1)·dt`.
    pub window: Option<f64>,
    pub persistence_factor: f64,
    /// Channels entering the restricted RMS column when a grid is known.
    pub component_channels: Vec<String>,
    pub roms: BTreeMap<String, RomSpec>,
    pub synth: SynthConfig,
    pub slice: SliceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            out: PathBuf::from("out"),
            seed: 0,
            rank: None,
            tlsq: true,
            tlsq_rank: None,
            normalize: true,
            mean_removal: false,
            bfit: BFit::MultiSnapshot { count: DEFAULT_FIT_SNAPSHOTS },
            svd: SvdMode::HighAccuracy,
            loo_trials: DEFAULT_TRIALS,
            h_robust: ROBUSTNESS_BANDWIDTH,
            h_cluster: CLUSTER_BANDWIDTH,
            cluster_level: CLUSTER_LEVEL_FRACTION,
            window: None,
            persistence_factor: PERSISTENCE_FACTOR,
            component_channels: vec!["uz".into()],
            roms: BTreeMap::from([("all".to_string(), RomSpec::All)]),
            synth: SynthConfig {
                tidal: true,
                dim: 500,
                snapshots: 144,
                dt: 1.0,
                noise: 0.0,
                name: "oracle".into(),
                grid: None,
                land: Vec::new(),
                modes: Vec::new(),
            },
            slice: SliceConfig { modes: vec![1], shape: SliceShape::Layer(0), channel: "ux".into() },
        }
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64, CliError> {
    let v: f64 = s.trim().parse().map_err(|_| bad(format!("{what}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(bad(format!("{what}: must be finite, got {s:?}")));
    }
    Ok(v)
}

fn parse_usize(s: &str, what: &str) -> Result<usize, CliError> {
    s.trim().parse().map_err(|_| bad(format!("{what}: not a non-negative integer: {s:?}")))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse_usize(t, what)).collect()
}

fn parse_switch(s: &str, what: &str) -> Result<bool, CliError> {
    match s.trim() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(bad(format!("{what}: expected on|off, got {other:?}"))),
    }
}

fn parse_positive(s: &str, what: &str) -> Result<f64, CliError> {
    let v = parse_f64(s, what)?;
    if v <= 0.0 {
        return Err(bad(format!("{what}: must be positive, got {v}")));
    }
    Ok(v)
}

fn parse_pairs(s: &str, what: &str) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|p| {
            let (i, j) = p.split_once(',').ok_or_else(|| bad(format!("{what}: expected i,j, got {p:?}")))?;
            Ok((parse_usize(i, what)?, parse_usize(j, what)?))
        })
        .collect()
}

pub fn parse_bfit(s: &str) -> Result<BFit, CliError> {
    match s.trim() {
        "first" => Ok(BFit::FirstSnapshot),
        other => match other.strip_prefix("multi:") {
            Some(k) => {
                let count = parse_usize(k, "bfit count")?;
                if count < 2 {
                    return Err(bad("bfit multi:<k> needs k ≥ 2"));
                }
                Ok(BFit::MultiSnapshot { count })
            }
            None => Err(bad(format!("bfit must be first or multi:<k>, got {other:?}"))),
        },
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Raw settings: key → (value, directory that relative paths resolve against).
#[derive(Debug, Default)]
pub struct Settings {
    entries: BTreeMap<String, (String, Option<PathBuf>)>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::Io)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut s = Settings::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
            let k = k.trim().to_string();
            if s.entries.insert(k.clone(), (v.trim().to_string(), Some(base.clone()))).is_some() {
                return Err(bad(format!("{}:{}: duplicate key {k:?}", path.display(), lineno + 1)));
            }
        }
        Ok(s)
    }

    /// Later calls win over the file.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), None));
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        let mut synth_modes: BTreeMap<usize, SynthMode> = BTreeMap::new();
        let mut roms_set = false;
        for (key, (v, base)) in &self.entries {
            let path = |v: &str| match base {
                Some(b) if Path::new(v).is_relative() => b.join(v),
                _ => PathBuf::from(v),
            };
            match key.as_str() {
                "schema_version" => {
                    if parse_usize(v, key)? != CONFIG_SCHEMA_VERSION as usize {
                        return Err(bad(format!("unsupported config schema {v}")));
                    }
                }
                "command" => {}
                "input" => c.input = Some(path(v)),
                "out" => c.out = path(v),
                "seed" => c.seed = v.trim().parse().map_err(|_| bad(format!("seed: bad value {v:?}")))?,
                "rank" => c.rank = if v.trim() == "auto" { None } else { Some(parse_usize(v, key)?) },
                "tlsq" => c.tlsq = parse_switch(v, key)?,
                "tlsq_rank" => c.tlsq_rank = if v.trim() == "auto" { None } else { Some(parse_usize(v, key)?) },
                "normalize" => c.normalize = parse_switch(v, key)?,
                "mean_removal" => c.mean_removal = parse_switch(v, key)?,
                "bfit" => c.bfit = parse_bfit(v)?,
                "svd" => {
                    c.svd = match v.trim() {
                        "standard" => SvdMode::Standard,
                        "high_accuracy" => SvdMode::HighAccuracy,
                        o => return Err(bad(format!("svd must be standard or high_accuracy, got {o:?}"))),
                    }
                }
                "loo_trials" => c.loo_trials = parse_usize(v, key)?,
                "h_robust" => c.h_robust = parse_positive(v, key)?,
                "h_cluster" => c.h_cluster = parse_positive(v, key)?,
                "cluster_level" => c.cluster_level = parse_positive(v, key)?,
                "window" => c.window = if v.trim() == "auto" { None } else { Some(parse_positive(v, key)?) },
                "persistence_factor" => c.persistence_factor = parse_positive(v, key)?,
                "component_channels" => {
                    c.component_channels = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
                }
                "synth.preset" => {
                    c.synth.tidal = match v.trim() {
                        "tidal" => true,
                        "custom" => false,
                        o => return Err(bad(format!("synth.preset must be tidal or custom, got {o:?}"))),
                    }
                }
                "synth.dim" => c.synth.dim = parse_usize(v, key)?,
                "synth.snapshots" => c.synth.snapshots = parse_usize(v, key)?,
                "synth.dt" => c.synth.dt = parse_positive(v, key)?,
                "synth.noise" => c.synth.noise = parse_f64(v, key)?,
                "synth.name" => {
                    let name = v.trim();
                    if name.is_empty() || name.contains(['/', '\\']) {
                        return Err(bad(format!("synth.name must be a plain file stem, got {name:?}")));
                    }
                    c.synth.name = name.to_string();
                }
                "synth.grid" => {
                    let d = parse_list(v, key)?;
                    if d.len() != 3 || d.contains(&0) {
                        return Err(bad(format!("synth.grid needs nx,ny,nz ≥ 1, got {v:?}")));
                    }
                    c.synth.grid = Some((d[0], d[1], d[2]));
                }
                "synth.land" => c.synth.land = parse_pairs(v, key)?,
                "slice.modes" => c.slice.modes = parse_list(v, key)?,
                "slice.channel" => c.slice.channel = v.trim().to_string(),
                "slice.kind" => {
                    let v = v.trim();
                    c.slice.shape = if v == "bottom" {
                        SliceShape::Bottom
                    } else if let Some(k) = v.strip_prefix("layer:") {
                        SliceShape::Layer(parse_usize(k, key)?)
                    } else if let Some(p) = v.strip_prefix("section:") {
                        SliceShape::Section(parse_pairs(p, key)?)
                    } else {
                        return Err(bad(format!("slice.kind must be layer:<k>, section:<i,j;…> or bottom, got {v:?}")));
                    };
                }
                k => {
                    if let Some(idx) = k.strip_prefix("synth.mode.") {
                        synth_modes.insert(parse_usize(idx, key)?, SynthMode::parse(v)?);
                    } else if let Some(name) = k.strip_prefix("rom.") {
                        if name.is_empty() || !name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                            return Err(bad(format!("ROM names may use letters, digits, '_' and '-', got {name:?}")));
                        }
                        if !roms_set {
                            c.roms.clear();
                            roms_set = true;
                        }
                        c.roms.insert(name.to_string(), RomSpec::parse(v)?);
                    } else {
                        return Err(bad(format!("unknown configuration key {k:?}")));
                    }
                }
            }
        }
        c.synth.modes = synth_modes.into_values().collect();
        if !c.synth.tidal && c.synth.modes.is_empty() {
            return Err(bad("synth.preset = custom needs at least one synth.mode.<k>"));
        }
        if c.cluster_level > 1.0 {
            return Err(bad("cluster_level must be in (0, 1]"));
        }
        if c.persistence_factor >= 1.0 {
            return Err(bad("persistence_factor must be in (0, 1)"));
        }
        Ok(c)
    }
}

impl RunConfig {
    pub fn dmd_options(&self, rank: usize) -> DmdOptions {
        DmdOptions {
            rank,
            use_tlsq: self.tlsq,
            tlsq_rank: self.tlsq_rank,
            normalize_columns: self.normalize,
            remove_mean: self.mean_removal,
            b_fit: self.bfit,
            svd_mode: self.svd,
        }
    }

    /// Resolved configuration in the input format, so it can be fed back in.
    pub fn echo(&self, command: &str) -> String {
        let mut s = String::new();
        let onoff = |b: bool| if b { "on" } else { "off" };
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "schema_version = {CONFIG_SCHEMA_VERSION}");
        let _ = writeln!(s, "command = {command}");
        if let Some(p) = &self.input {
            let _ = writeln!(s, "input = {}", p.display());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "rank = {}", auto(self.rank.map(|r| r.to_string())));
        let _ = writeln!(s, "tlsq = {}", onoff(self.tlsq));
        let _ = writeln!(s, "tlsq_rank = {}", auto(self.tlsq_rank.map(|r| r.to_string())));
        let _ = writeln!(s, "normalize = {}", onoff(self.normalize));
        let _ = writeln!(s, "mean_removal = {}", onoff(self.mean_removal));
        let bfit = match self.bfit {
            BFit::FirstSnapshot => "first".to_string(),
            BFit::MultiSnapshot { count } => format!("multi:{count}"),
        };
        let _ = writeln!(s, "bfit = {bfit}");
        let svd = match self.svd {
            SvdMode::Standard => "standard",
            SvdMode::HighAccuracy => "high_accuracy",
        };
        let _ = writeln!(s, "svd = {svd}");
        let _ = writeln!(s, "loo_trials = {}", self.loo_trials);
        let _ = writeln!(s, "h_robust = {:e}", self.h_robust);
        let _ = writeln!(s, "h_cluster = {:e}", self.h_cluster);
        let _ = writeln!(s, "cluster_level = {:e}", self.cluster_level);
        let _ = writeln!(s, "window = {}", auto(self.window.map(|w| format!("{w:e}"))));
        let _ = writeln!(s, "persistence_factor = {:e}", self.persistence_factor);
        let _ = writeln!(s, "component_channels = {}", self.component_channels.join(","));
        for (name, spec) in &self.roms {
            let _ = writeln!(s, "rom.{name} = {}", spec.render());
        }
        let sy = &self.synth;
        let _ = writeln!(s, "synth.preset = {}", if sy.tidal { "tidal" } else { "custom" });
        let _ = writeln!(s, "synth.dim = {}", sy.dim);
        let _ = writeln!(s, "synth.snapshots = {}", sy.snapshots);
        let _ = writeln!(s, "synth.dt = {:e}", sy.dt);
        let _ = writeln!(s, "synth.noise = {:e}", sy.noise);
        let _ = writeln!(s, "synth.name = {}", sy.name);
        if let Some((nx, ny, nz)) = sy.grid {
            let _ = writeln!(s, "synth.grid = {nx},{ny},{nz}");
        }
        if !sy.land.is_empty() {
            let cols: Vec<String> = sy.land.iter().map(|(i, j)| format!("{i},{j}")).collect();
            let _ = writeln!(s, "synth.land = {}", cols.join(";"));
        }
        for (k, m) in sy.modes.iter().enumerate() {
            let _ = writeln!(s, "synth.mode.{k} = {}", m.render());
        }
        let _ = writeln!(s, "slice.modes = {}", join(&self.slice.modes));
        let _ = writeln!(s, "slice.channel = {}", self.slice.channel);
        let kind = match &self.slice.shape {
            SliceShape::Layer(k) => format!("layer:{k}"),
            SliceShape::Bottom => "bottom".into(),
            SliceShape::Section(p) => {
                format!("section:{}", p.iter().map(|(i, j)| format!("{i},{j}")).collect::<Vec<_>>().join(";"))
            }
        };
        let _ = writeln!(s, "slice.kind = {kind}");
        s
    }
}
