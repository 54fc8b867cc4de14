//! Experiment configuration: flat key=value files, CLI overrides, and a
//! canonical hash of the physics-relevant fields.
//!
//! The hash deliberately covers only what determines the eigenproblem —
//! model kind, grid, flux, potential, conformal factor — and not output
//! paths or the experiment name, so eigendecomposition caches are shared
//! across experiments that probe the same operator.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use qoplab_core::geometry::ModelKind;

/// Grid-size policy: a fixed `N`, or `auto = max(16, 8⌈√p⌉)` which keeps
/// the magnetic length resolved by a comparable number of lattice sites at
/// every flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPolicy {
    Auto,
    Explicit(usize),
}

impl GridPolicy {
    pub fn resolve(&self, p: i64) -> usize {
        match self {
            GridPolicy::Explicit(n) => *n,
            GridPolicy::Auto => {
                let per_cell = 8 * (p as f64).sqrt().ceil() as usize;
                per_cell.max(16)
            }
        }
    }
}

impl fmt::Display for GridPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPolicy::Auto => write!(f, "auto"),
            GridPolicy::Explicit(n) => write!(f, "{n}"),
        }
    }
}

/// Named presets for the auxiliary potential Φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiDescriptor {
    Zero,
    /// `amp · cos(2π x₁)`.
    Cosine(f64),
}

impl fmt::Display for PhiDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiDescriptor::Zero => write!(f, "zero"),
            PhiDescriptor::Cosine(a) => write!(f, "cosine:{a}"),
        }
    }
}

/// Named presets for the conformal factor λ (metric `λ·g_flat`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaDescriptor {
    One,
    /// `1 + amp · cos(2π x₁)`.
    Cosine(f64),
}

impl fmt::Display for LambdaDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaDescriptor::One => write!(f, "one"),
            LambdaDescriptor::Cosine(a) => write!(f, "cosine:{a}"),
        }
    }
}

/// The experiments the harness can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Bound-cluster dimension versus the `p^n` count.
    Dim,
    /// Cluster width, gap, and gap ratio survey.
    Gap,
    /// `C^m` error of `Q f − f` against flux, with log-log slope fits.
    Rate,
    /// Off-diagonal kernel magnitude profile and Gaussian-decay fit.
    Profile,
    /// Near-diagonal comparison against the model Gaussian kernel.
    Gaussian,
    /// Fourier multipliers of `Q` against the heat-kernel prediction.
    Heat,
    /// Exact-algebra checks: idempotence, reproducing identity, gauge
    /// invariance, normalization, self-adjointness, model quadrature.
    Invariants,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "dim" => Ok(ExperimentKind::Dim),
            "gap" => Ok(ExperimentKind::Gap),
            "rate" => Ok(ExperimentKind::Rate),
            "profile" => Ok(ExperimentKind::Profile),
            "gaussian" => Ok(ExperimentKind::Gaussian),
            "heat" => Ok(ExperimentKind::Heat),
            "invariants" => Ok(ExperimentKind::Invariants),
            other => Err(format!(
                "unknown experiment '{other}' (expected dim|gap|rate|profile|gaussian|heat|invariants)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Dim => "dim",
            ExperimentKind::Gap => "gap",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Profile => "profile",
            ExperimentKind::Gaussian => "gaussian",
            ExperimentKind::Heat => "heat",
            ExperimentKind::Invariants => "invariants",
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelKind,
    pub grid: GridPolicy,
    pub p_list: Vec<i64>,
    pub phi: PhiDescriptor,
    pub lambda: LambdaDescriptor,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub plot: bool,
    /// Named tolerance overrides from `tol.<name> = <value>` config keys.
    pub tolerances: BTreeMap<String, f64>,
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::FlatTorus2 => "flat-torus-2",
        ModelKind::FlatTorus4 => "flat-torus-4",
        ModelKind::ConformalTorus2 => "conformal-torus-2",
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "flat-torus-2" => Ok(ModelKind::FlatTorus2),
        "flat-torus-4" => Ok(ModelKind::FlatTorus4),
        "conformal-torus-2" => Ok(ModelKind::ConformalTorus2),
        other => Err(format!(
            "unknown model '{other}' (expected flat-torus-2|flat-torus-4|conformal-torus-2)"
        )),
    }
}

fn parse_amplitude(spec: &str, what: &str) -> Result<f64, String> {
    let amp: f64 = spec
        .parse()
        .map_err(|_| format!("{what} amplitude '{spec}' is not a number"))?;
    if !amp.is_finite() {
        return Err(format!("{what} amplitude must be finite"));
    }
    Ok(amp)
}

fn parse_phi(s: &str) -> Result<PhiDescriptor, String> {
    if s == "zero" {
        Ok(PhiDescriptor::Zero)
    } else if let Some(rest) = s.strip_prefix("cosine:") {
        Ok(PhiDescriptor::Cosine(parse_amplitude(rest, "phi")?))
    } else {
        Err(format!("unknown phi '{s}' (expected zero|cosine:<amp>)"))
    }
}

fn parse_lambda(s: &str) -> Result<LambdaDescriptor, String> {
    if s == "one" {
        Ok(LambdaDescriptor::One)
    } else if let Some(rest) = s.strip_prefix("cosine:") {
        Ok(LambdaDescriptor::Cosine(parse_amplitude(rest, "lambda")?))
    } else {
        Err(format!("unknown lambda '{s}' (expected one|cosine:<amp>)"))
    }
}

fn parse_grid(s: &str) -> Result<GridPolicy, String> {
    if s == "auto" {
        Ok(GridPolicy::Auto)
    } else {
        s.parse::<usize>()
            .map(GridPolicy::Explicit)
            .map_err(|_| format!("grid must be 'auto' or a positive integer, got '{s}'"))
    }
}

fn parse_p_list(s: &str) -> Result<Vec<i64>, String> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        out.push(
            tok.parse::<i64>()
                .map_err(|_| format!("flux value '{tok}' is not an integer"))?,
        );
    }
    Ok(out)
}

/// Raw settings gathered from a config file and/or CLI flags, before
/// validation.  All fields are optional strings so that the merge rule
/// (flags override file) is uniform.
#[derive(Debug, Clone, Default)]
pub struct RawSettings {
    pub map: BTreeMap<String, String>,
}

impl RawSettings {
    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    /// Later sources win key-by-key.
    pub fn merged_with(&self, overrides: &RawSettings) -> RawSettings {
        let mut map = self.map.clone();
        for (k, v) in &overrides.map {
            map.insert(k.clone(), v.clone());
        }
        RawSettings { map }
    }
}

/// Parse a flat `key = value` config file.  Blank lines and `#` comments
/// are skipped; unknown keys are rejected so typos fail loudly.
pub fn parse_config_file(path: &Path) -> Result<RawSettings, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut settings = RawSettings::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let known = matches!(
            key,
            "model" | "grid" | "p" | "phi" | "lambda" | "out" | "cache" | "plot"
        ) || key.starts_with("tol.");
        if !known {
            return Err(format!("line {}: unknown key '{key}'", lineno + 1));
        }
        settings.set(key, value.to_string());
    }
    Ok(settings)
}

/// Resolve settings into a validated config.
pub fn build_config(
    experiment: ExperimentKind,
    settings: &RawSettings,
) -> Result<ExperimentConfig, String> {
    let get = |k: &str| settings.map.get(k).map(String::as_str);
    let model = parse_model(get("model").unwrap_or("flat-torus-2"))?;
    let grid = parse_grid(get("grid").unwrap_or("auto"))?;
    let p_list = parse_p_list(get("p").ok_or("missing flux list: pass --p or set p = ...")?)?;
    let phi = parse_phi(get("phi").unwrap_or("zero"))?;
    let lambda = parse_lambda(get("lambda").unwrap_or("one"))?;
    let out_dir = PathBuf::from(get("out").unwrap_or("out"));
    let cache_dir = get("cache").map(PathBuf::from);
    let plot = match get("plot").unwrap_or("false") {
        "true" | "1" => true,
        "false" | "0" => false,
        other => return Err(format!("plot must be true or false, got '{other}'")),
    };
    let mut tolerances = BTreeMap::new();
    for (k, v) in &settings.map {
        if let Some(name) = k.strip_prefix("tol.") {
            let val: f64 = v
                .parse()
                .map_err(|_| format!("tolerance override '{k}' is not a number"))?;
            tolerances.insert(name.to_string(), val);
        }
    }
    let config = ExperimentConfig {
        experiment,
        model,
        grid,
        p_list,
        phi,
        lambda,
        out_dir,
        cache_dir,
        plot,
        tolerances,
    };
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.p_list.is_empty() {
            return Err("flux list is empty".into());
        }
        if self.p_list.iter().any(|&p| p < 1) {
            return Err("flux values must be positive".into());
        }
        if self.p_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err("flux list must be strictly ascending".into());
        }
        if let PhiDescriptor::Cosine(a) = self.phi {
            if a.abs() > 1.0 {
                return Err(format!("phi amplitude {a} exceeds 1"));
            }
        }
        if let LambdaDescriptor::Cosine(a) = self.lambda {
            if a.abs() > 1.0 {
                return Err(format!("lambda amplitude {a} exceeds 1"));
            }
            if !(self.model == ModelKind::ConformalTorus2 || a == 0.0) {
                return Err("lambda presets other than 'one' need model = conformal-torus-2".into());
            }
        }
        if self.model == ModelKind::ConformalTorus2 && self.lambda == LambdaDescriptor::One {
            return Err(
                "conformal-torus-2 needs a non-trivial lambda (use flat-torus-2 for λ ≡ 1)".into(),
            );
        }
        match self.experiment {
            ExperimentKind::Heat | ExperimentKind::Profile => {
                if self.model != ModelKind::FlatTorus2 {
                    return Err(format!(
                        "{} experiment is defined on flat-torus-2 only",
                        self.experiment.name()
                    ));
                }
            }
            ExperimentKind::Gaussian => {
                if self.model == ModelKind::ConformalTorus2 {
                    return Err("gaussian experiment needs a flat model".into());
                }
            }
            _ => {}
        }
        for (p, n) in self.p_list.iter().map(|&p| (p, self.grid.resolve(p))) {
            if n < 4 {
                return Err(format!("grid {n} too small at p = {p}"));
            }
            if n % 2 != 0 {
                return Err(format!("grid {n} must be even (profiles use the grid center)"));
            }
        }
        Ok(())
    }

    /// Tolerance override lookup with a default.
    pub fn tol(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    /// Canonical string of the physics fields at one flux value.  Keys are
    /// emitted in a fixed sorted order, so the hash does not depend on how
    /// the configuration was assembled.
    fn physics_string(&self, p: i64, n: usize) -> String {
        format!(
            "grid={n};lambda={};model={};p={p};phi={}",
            self.lambda,
            model_name(self.model),
            self.phi
        )
    }

    /// Cache key for the eigendecomposition at flux `p`: SHA-256 of the
    /// canonical physics string plus the solve size.
    pub fn physics_hash(&self, p: i64, count: usize) -> String {
        let n = self.grid.resolve(p);
        let mut hasher = Sha256::new();
        hasher.update(self.physics_string(p, n).as_bytes());
        hasher.update(format!(";count={count}").as_bytes());
        hex_digest(&hasher.finalize())
    }

    /// Hash of the whole run's physics (all fluxes), reported alongside
    /// results so reruns can be matched to their configuration.
    pub fn family_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for &p in &self.p_list {
            let n = self.grid.resolve(p);
            hasher.update(self.physics_string(p, n).as_bytes());
            hasher.update(b"|");
        }
        hex_digest(&hasher.finalize())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn base_settings() -> RawSettings {
        let mut s = RawSettings::default();
        s.set("p", "4,8".into());
        s
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = build_config(ExperimentKind::Dim, &base_settings()).unwrap();
        assert_eq!(cfg.model, ModelKind::FlatTorus2);
        assert_eq!(cfg.grid, GridPolicy::Auto);
        assert_eq!(cfg.p_list, vec![4, 8]);
        assert_eq!(cfg.phi, PhiDescriptor::Zero);
        assert!(cfg.cache_dir.is_none());

        let mut file = base_settings();
        file.set("grid", "24".into());
        file.set("phi", "cosine:0.5".into());
        let mut flags = RawSettings::default();
        flags.set("grid", "32".into());
        let cfg = build_config(ExperimentKind::Gap, &file.merged_with(&flags)).unwrap();
        assert_eq!(cfg.grid, GridPolicy::Explicit(32));
        assert_eq!(cfg.phi, PhiDescriptor::Cosine(0.5));
    }

    #[test]
    fn auto_grid_tracks_magnetic_length() {
        assert_eq!(GridPolicy::Auto.resolve(1), 16);
        assert_eq!(GridPolicy::Auto.resolve(4), 16);
        assert_eq!(GridPolicy::Auto.resolve(8), 24);
        assert_eq!(GridPolicy::Auto.resolve(16), 32);
        assert_eq!(GridPolicy::Auto.resolve(64), 64);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut s = RawSettings::default();
        s.set("p", "".into());
        let err = build_config(ExperimentKind::Dim, &s).unwrap_err();
        assert!(err.contains("empty"));

        let mut s = base_settings();
        s.set("p", "8,4".into());
        assert!(build_config(ExperimentKind::Dim, &s)
            .unwrap_err()
            .contains("ascending"));

        let mut s = base_settings();
        s.set("phi", "cosine:1.5".into());
        assert!(build_config(ExperimentKind::Dim, &s)
            .unwrap_err()
            .contains("exceeds 1"));

        let mut s = base_settings();
        s.set("model", "conformal-torus-2".into());
        assert!(build_config(ExperimentKind::Dim, &s)
            .unwrap_err()
            .contains("non-trivial lambda"));

        let mut s = base_settings();
        s.set("model", "flat-torus-4".into());
        assert!(build_config(ExperimentKind::Heat, &s)
            .unwrap_err()
            .contains("flat-torus-2 only"));
    }

    #[test]
    fn config_file_round_trip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# survey setup").unwrap();
        writeln!(f, "model = conformal-torus-2").unwrap();
        writeln!(f, "lambda = cosine:0.2").unwrap();
        writeln!(f, "p = 4, 8, 16").unwrap();
        writeln!(f, "tol.gap_ratio = 12.5").unwrap();
        let settings = parse_config_file(&path).unwrap();
        let cfg = build_config(ExperimentKind::Gap, &settings).unwrap();
        assert_eq!(cfg.model, ModelKind::ConformalTorus2);
        assert_eq!(cfg.p_list, vec![4, 8, 16]);
        assert_eq!(cfg.tol("gap_ratio", 10.0), 12.5);
        assert_eq!(cfg.tol("unset", 10.0), 10.0);

        let bad = dir.path().join("bad.conf");
        std::fs::write(&bad, "modle = flat-torus-2\n").unwrap();
        assert!(parse_config_file(&bad).unwrap_err().contains("unknown key"));
    }

    #[test]
    fn physics_hash_ignores_plumbing_and_orders_canonically() {
        let mut a = base_settings();
        a.set("out", "results-a".into());
        let mut b = base_settings();
        b.set("out", "elsewhere".into());
        b.set("plot", "true".into());
        let ca = build_config(ExperimentKind::Dim, &a).unwrap();
        let cb = build_config(ExperimentKind::Rate, &b).unwrap();
        // Same physics, different experiment and plumbing: same hashes.
        assert_eq!(ca.physics_hash(4, 10), cb.physics_hash(4, 10));
        assert_eq!(ca.family_hash(), cb.family_hash());
        // Different flux or count: different key.
        assert_ne!(ca.physics_hash(4, 10), ca.physics_hash(8, 10));
        assert_ne!(ca.physics_hash(4, 10), ca.physics_hash(4, 12));
    }
}
