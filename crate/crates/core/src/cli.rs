//! Command-line runner: configuration, suite orchestration and the
//! deterministic report.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Parser;
use serde::Deserialize;

use crate::error::{CrError, Result};
use crate::integrate::build_grid;
use crate::manifold::{make_conformal, make_heisenberg, make_sphere, ManifoldModel};
use crate::pde::solve_schur_potential;
use crate::verify::*;

pub const BATTERY_VERSION: &str = "crgeom-battery-1";

/// Standard battery, in report order.
pub const BATTERY: [&str; 8] = ["1", "x1", "x2", "x1*x2", "x1*x3", "|z1|^2", "x1^2-x2^2", "x1^2-y1^2"];

/// Scaled copy used for scale coherence.
pub const SCALED: (&str, &str, f64) = ("x1*x3", "-3*x1*x3", -3.0);

/// Exit status for invalid invocations, distinct from the verdict codes.
pub const USAGE_EXIT: i32 = 64;

pub const STRUCT_POINTS: usize = 200;
pub const STRUCT_FD_POINTS: usize = 3;
pub const POINTWISE_POINTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Frames,
    Pointwise,
    Integral,
    Cordes,
    SchurNew,
    SchurCsw,
    Corollaries,
    Spectral,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Frames,
        Suite::Pointwise,
        Suite::Integral,
        Suite::Cordes,
        Suite::SchurNew,
        Suite::SchurCsw,
        Suite::Corollaries,
        Suite::Spectral,
        Suite::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Frames => "frames",
            Suite::Pointwise => "pointwise",
            Suite::Integral => "integral",
            Suite::Cordes => "cordes",
            Suite::SchurNew => "schur_new",
            Suite::SchurCsw => "schur_csw",
            Suite::Corollaries => "corollaries",
            Suite::Spectral => "spectral",
            Suite::Convergence => "convergence",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CrError::Config(format!("unknown suite '{s}'")))
    }

    /// Suites that integrate over the manifold.
    pub fn needs_compact(self) -> bool {
        !matches!(self, Suite::Frames | Suite::Pointwise)
    }

    pub fn needs_n2(self) -> bool {
        matches!(self, Suite::SchurNew | Suite::SchurCsw | Suite::Corollaries)
    }
}

/// Comma-separated suite list; empty entries are ignored.
pub fn parse_suites(s: &str) -> Result<Vec<Suite>> {
    let mut v = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(Suite::from_name)
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(CrError::Config("empty suite list".into()));
    }
    v.sort();
    v.dedup();
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldKind {
    Sphere,
    ConformalSphere,
    Heisenberg,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::ConformalSphere => "conformal_sphere",
            ManifoldKind::Heisenberg => "heisenberg",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ManifoldKind::Sphere),
            "conformal_sphere" => Ok(ManifoldKind::ConformalSphere),
            "heisenberg" => Ok(ManifoldKind::Heisenberg),
            _ => Err(CrError::Config(format!("unknown manifold '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifold: ManifoldKind,
    pub n: usize,
    pub conformal_u: String,
    pub grid_r: usize,
    pub h: f64,
    pub galerkin_d: usize,
    pub suites: Vec<Suite>,
    pub output_path: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Parser, Debug, Default)]
#[command(name = "crgeom", about = "Verify pseudohermitian integral identities and inequalities on model CR manifolds")]
pub struct Args {
    /// sphere, conformal_sphere or heisenberg
    #[arg(long)]
    pub manifold: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Conformal factor u, with theta' = exp(2u) theta
    #[arg(long = "u", alias = "conformal-u")]
    pub u: Option<String>,
    /// Quadrature resolution
    #[arg(long = "grid-r", alias = "R")]
    pub grid_r: Option<usize>,
    /// Finite-difference step
    #[arg(long)]
    pub h: Option<f64>,
    /// Galerkin polynomial degree
    #[arg(long = "degree", alias = "galerkin-d")]
    pub degree: Option<usize>,
    /// Comma-separated suites
    #[arg(long)]
    pub suites: Option<String>,
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with the same keys; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifold: Option<String>,
    pub n: Option<usize>,
    pub conformal_u: Option<String>,
    pub grid_r: Option<usize>,
    pub h: Option<f64>,
    pub galerkin_d: Option<usize>,
    pub suites: Option<Vec<String>>,
    pub output_path: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Parses a TOML configuration document.
pub fn parse_config_file(src: &str) -> Result<FileConfig> {
    toml::from_str(src).map_err(|e| CrError::Config(e.to_string()))
}

/// Merges flags over an optional file and validates.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return Err(CrError::Config(e.to_string())),
    };
    let file = match &args.config {
        Some(p) => parse_config_file(&std::fs::read_to_string(p).map_err(CrError::Io)?)?,
        None => FileConfig::default(),
    };
    let file_suites = match file.suites {
        Some(v) => Some(parse_suites(&v.join(","))?),
        None => None,
    };
    let suites = match &args.suites {
        Some(s) => Some(parse_suites(s)?),
        None => file_suites,
    };
    let manifold = ManifoldKind::from_name(args.manifold.as_deref().or(file.manifold.as_deref()).unwrap_or("sphere"))?;
    let cfg = RunConfig {
        manifold,
        n: args.n.or(file.n).unwrap_or(2),
        conformal_u: args.u.or(file.conformal_u).unwrap_or_else(|| "0.1*x1".into()),
        grid_r: args.grid_r.or(file.grid_r).unwrap_or(16),
        h: args.h.or(file.h).unwrap_or(1e-3),
        galerkin_d: args.degree.or(file.galerkin_d).unwrap_or(6),
        suites: Vec::new(),
        output_path: args.output.or(file.output_path),
        seed: args.seed.or(file.seed).unwrap_or(0),
    };
    validate(cfg, suites)
}

/// Checks ranges and suite applicability; `None` selects every applicable suite.
pub fn validate(mut cfg: RunConfig, suites: Option<Vec<Suite>>) -> Result<RunConfig> {
    if cfg.n < 1 {
        return Err(CrError::Config("n must be at least 1".into()));
    }
    if cfg.grid_r < 4 {
        return Err(CrError::Config("grid resolution must be at least 4".into()));
    }
    if !(cfg.h > 0.0 && cfg.h <= 0.1) {
        return Err(CrError::Config("h must lie in (0, 0.1]".into()));
    }
    if cfg.galerkin_d < 2 {
        return Err(CrError::Config("Galerkin degree must be at least 2".into()));
    }
    let compact = cfg.manifold != ManifoldKind::Heisenberg;
    let explicit = suites.is_some();
    let suites = suites.unwrap_or_else(|| {
        Suite::ALL.into_iter().filter(|s| (compact || !s.needs_compact()) && (cfg.n >= 2 || !s.needs_n2())).collect()
    });
    if explicit {
        if let Some(s) = suites.iter().find(|s| s.needs_compact() && !compact) {
            return Err(CrError::Config(format!("suite '{}' needs a compact model", s.name())));
        }
        if let Some(s) = suites.iter().find(|s| s.needs_n2() && cfg.n < 2) {
            return Err(CrError::Config(format!("suite '{}' needs n >= 2", s.name())));
        }
    }
    cfg.suites = suites;
    // validates the expression and that the model exists
    build_model(&cfg)?;
    Ok(cfg)
}

pub fn build_model(cfg: &RunConfig) -> Result<ManifoldModel> {
    match cfg.manifold {
        ManifoldKind::Sphere => make_sphere(cfg.n),
        ManifoldKind::Heisenberg => make_heisenberg(cfg.n),
        ManifoldKind::ConformalSphere => {
            let base = make_sphere(cfg.n)?;
            let u = base.field(&cfg.conformal_u)?;
            Ok(make_conformal(&base, &u))
        }
    }
}

/// Battery members that make sense in dimension `n`.
pub fn battery(m: &ManifoldModel) -> Vec<&'static str> {
    BATTERY.iter().copied().filter(|e| m.field(e).is_ok()).collect()
}

#[derive(Clone, Debug)]
pub struct Report {
    pub config: RunConfig,
    pub model: String,
    pub battery: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn overall_pass(&self) -> bool {
        self.checks.iter().all(|c| !c.counts() || c.pass) && !self.checks.iter().any(|c| c.status == Status::Inconclusive)
    }

    /// 1 on any failure, 3 on an inconclusive check, 2 when some check was
    /// gated or its hypothesis failed, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        let any = |p: &dyn Fn(&CheckResult) -> bool| self.checks.iter().any(p);
        if any(&|c| c.status == Status::Fail) {
            1
        } else if any(&|c| c.status == Status::Inconclusive) {
            3
        } else if any(&|c| c.status == Status::GateNotMet || c.hypothesis_failed) {
            2
        } else {
            0
        }
    }

    pub fn count(&self, s: Status) -> usize {
        self.checks.iter().filter(|c| c.status == s).count()
    }

    pub fn to_json(&self) -> String {
        let mut o = String::new();
        let c = &self.config;
        let _ = writeln!(o, "{{");
        let _ = writeln!(o, "  \"battery_version\": {},", js(BATTERY_VERSION));
        let _ = writeln!(o, "  \"config\": {{");
        let _ = writeln!(o, "    \"manifold\": {},", js(c.manifold.name()));
        let _ = writeln!(o, "    \"n\": {},", c.n);
        let _ = writeln!(o, "    \"conformal_u\": {},", js(&c.conformal_u));
        let _ = writeln!(o, "    \"grid_R\": {},", c.grid_r);
        let _ = writeln!(o, "    \"h\": {},", num(c.h));
        let _ = writeln!(o, "    \"galerkin_D\": {},", c.galerkin_d);
        let names: Vec<String> = c.suites.iter().map(|s| js(s.name())).collect();
        let _ = writeln!(o, "    \"suites\": [{}],", names.join(", "));
        let _ = writeln!(o, "    \"seed\": {}", c.seed);
        let _ = writeln!(o, "  }},");
        let _ = writeln!(o, "  \"model\": {},", js(&self.model));
        let b: Vec<String> = self.battery.iter().map(|s| js(s)).collect();
        let _ = writeln!(o, "  \"battery\": [{}],", b.join(", "));
        let _ = writeln!(o, "  \"checks\": [");
        let mut sorted: Vec<&CheckResult> = self.checks.iter().collect();
        sorted.sort_by(|a, b| a.check_id.cmp(&b.check_id));
        for (i, r) in sorted.iter().enumerate() {
            let m = &r.metadata;
            let _ = writeln!(o, "    {{");
            let _ = writeln!(o, "      \"check_id\": {},", js(&r.check_id));
            let _ = writeln!(o, "      \"anchor\": {},", js(&r.anchor));
            let _ = writeln!(o, "      \"lhs\": {},", num(r.lhs));
            let _ = writeln!(o, "      \"rhs\": {},", num(r.rhs));
            let _ = writeln!(o, "      \"residual_or_margin\": {},", num(r.residual_or_margin));
            let _ = writeln!(o, "      \"tolerance\": {},", num(r.tolerance));
            let _ = writeln!(o, "      \"status\": {},", js(r.status.as_str()));
            let _ = writeln!(o, "      \"hypothesis_met\": {},", !r.hypothesis_failed);
            let _ = writeln!(o, "      \"note\": {},", js(&r.note));
            let deg = m.degree.map_or("null".to_string(), |d| d.to_string());
            let _ = writeln!(
                o,
                "      \"metadata\": {{\"model\": {}, \"f\": {}, \"grid\": {}, \"h\": {}, \"D\": {}}}",
                js(&m.model),
                js(&m.field),
                m.resolution,
                num(m.h),
                deg
            );
            let _ = writeln!(o, "    }}{}", if i + 1 < sorted.len() { "," } else { "" });
        }
        let _ = writeln!(o, "  ],");
        let _ = writeln!(o, "  \"convergence\": [");
        let conv: Vec<&&CheckResult> = sorted.iter().filter(|r| r.check_id.starts_with("convergence.")).collect();
        for (i, r) in conv.iter().enumerate() {
            let _ = writeln!(
                o,
                "    {{\"check_id\": {}, \"value\": {}, \"note\": {}}}{}",
                js(&r.check_id),
                num(r.lhs),
                js(&r.note),
                if i + 1 < conv.len() { "," } else { "" }
            );
        }
        let _ = writeln!(o, "  ],");
        let _ = writeln!(o, "  \"summary\": {{");
        for (k, s) in [
            ("pass", Status::Pass),
            ("fail", Status::Fail),
            ("gate_not_met", Status::GateNotMet),
            ("inconclusive", Status::Inconclusive),
            ("informational", Status::Informational),
        ] {
            let _ = writeln!(o, "    \"{k}\": {},", self.count(s));
        }
        let _ = writeln!(o, "    \"exit_code\": {}", self.exit_code());
        let _ = writeln!(o, "  }},");
        let _ = writeln!(o, "  \"overall_pass\": {}", self.overall_pass());
        let _ = writeln!(o, "}}");
        o
    }

    /// One line per non-passing check plus totals.
    pub fn summary(&self) -> String {
        let mut o = String::new();
        for c in &self.checks {
            if c.status != Status::Pass && c.status != Status::Informational {
                let _ = writeln!(o, "{:14} {} ({:.3e}) {}", c.status.as_str(), c.check_id, c.residual_or_margin, c.note);
            }
        }
        let _ = writeln!(
            o,
            "{}: {} checks, {} pass, {} fail, {} gated, {} inconclusive; overall_pass = {}",
            self.model,
            self.checks.len(),
            self.count(Status::Pass),
            self.count(Status::Fail),
            self.count(Status::GateNotMet),
            self.count(Status::Inconclusive),
            self.overall_pass()
        );
        o
    }
}

fn js(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

fn error_check(id: &str, e: &CrError, m: &ManifoldModel, cfg: &RunConfig) -> CheckResult {
    let md = Metadata { model: m.label().into(), field: String::new(), resolution: cfg.grid_r, h: cfg.h, degree: None };
    let mut c = CheckResult::info(&format!("{id}.error"), "", f64::NAN, &md);
    c.pass = false;
    c.status = Status::Fail;
    c.note = e.to_string();
    c
}

/// Runs the selected suites. Numerical errors become failing checks.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    let m = build_model(cfg)?;
    let h = cfg.h;
    let steps = [4.0 * h, 2.0 * h, h];
    let has = |s: Suite| cfg.suites.contains(&s);
    let labels = battery(&m);
    let mut checks = Vec::new();
    let push = |id: &str, r: Result<Vec<CheckResult>>, checks: &mut Vec<CheckResult>| match r {
        Ok(v) => checks.extend(v),
        Err(e) => checks.push(error_check(id, &e, &m, cfg)),
    };

    if has(Suite::Frames) || has(Suite::Convergence) {
        let fd = if has(Suite::Convergence) { STRUCT_FD_POINTS } else { 0 };
        let r = structural_maxima(&m, STRUCT_POINTS, fd, cfg.seed, &steps).map(|s| {
            let mut v = structural_results(&m, &s, STRUCT_POINTS, h);
            if !has(Suite::Frames) {
                v.retain(|c| c.check_id.starts_with("convergence."));
            }
            v
        });
        push("frames", r, &mut checks);
    }
    if has(Suite::Pointwise) {
        for e in &labels {
            let r = m
                .field(e)
                .and_then(|f| pointwise_maxima(&m, &f, POINTWISE_POINTS, cfg.seed, &steps))
                .map(|p| pointwise_results(&m, e, &p, POINTWISE_POINTS, h));
            push(&format!("pointwise.{e}"), r, &mut checks);
        }
    }
    if has(Suite::Convergence) && m.is_compact() {
        push("convergence.volume", volume_check(&m, cfg.grid_r, h).map(|c| vec![c]), &mut checks);
    }

    let grid_suites = [
        Suite::Integral,
        Suite::Cordes,
        Suite::SchurNew,
        Suite::SchurCsw,
        Suite::Corollaries,
        Suite::Spectral,
    ];
    if grid_suites.iter().any(|s| has(*s)) && m.is_compact() {
        let r = grid_checks(&m, cfg, &labels);
        push("grid", r, &mut checks);
    }
    Ok(Report { config: cfg.clone(), model: m.label().into(), battery: labels.iter().map(|s| s.to_string()).collect(), checks })
}

fn grid_checks(m: &ManifoldModel, cfg: &RunConfig, labels: &[&str]) -> Result<Vec<CheckResult>> {
    let has = |s: Suite| cfg.suites.contains(&s);
    let h = cfg.h;
    let d = cfg.galerkin_d;
    let grid = build_grid(m, cfg.grid_r)?;
    let mut probes: Vec<Probe> = labels.iter().map(|e| Probe::new(m, e)).collect::<Result<_>>()?;
    let scaled = m.field(SCALED.1).is_ok() && has(Suite::Integral);
    if scaled {
        probes.push(Probe::new(m, SCALED.1)?);
    }
    let needs_phi = has(Suite::SchurNew) || has(Suite::SchurCsw) || has(Suite::Corollaries) || has(Suite::Spectral);
    let mut out = Vec::new();
    let phi = if needs_phi && m.n() >= 2 {
        match solve_schur_potential(m, &grid, d) {
            Ok(p) => Some(p),
            Err(e) => {
                out.push(error_check("pde", &e, m, cfg));
                None
            }
        }
    } else {
        None
    };
    let sv = survey(m, &grid, &probes, phi.as_ref())?;
    let mut cordes_sv = Vec::new();
    for f in sv.fields.iter().filter(|f| labels.contains(&f.label.as_str())) {
        if has(Suite::Integral) {
            out.extend(identity_checks(&sv, f, h));
            out.push(paneitz_check(&sv, f, h));
        }
        if has(Suite::Cordes) {
            cordes_sv.extend(cordes_checks(&sv, f, h));
        }
    }
    out.extend(cordes_sv);
    if scaled {
        if let (Some(b), Some(s)) = (sv.field(SCALED.0), sv.field(SCALED.1)) {
            out.extend(scale_checks(&sv, b, s, SCALED.2, h));
        }
    }
    if has(Suite::Integral) {
        out.extend(divergence_checks(m, &grid, &probes[..probes.len().min(4)], h)?);
    }
    if let Some(p) = phi.as_ref() {
        if has(Suite::Integral) {
            out.extend(scalar_chain_checks(&sv, p, h, d));
        }
        for (s, v) in [(Suite::SchurNew, Variant::New), (Suite::SchurCsw, Variant::Csw)] {
            if has(s) {
                out.push(schur_check(&sv, p, v, h, d)?);
            }
        }
        if has(Suite::SchurNew) && has(Suite::SchurCsw) {
            out.push(constant_comparison(&sv, h));
        }
        if has(Suite::Corollaries) {
            out.extend(corollary_results(&sv, Some(p), h, d)?);
            out.extend(positivity_results(&sv, h));
        }
        if has(Suite::Spectral) {
            let sys = &p.system;
            out.push(self_adjoint_check(m, sys, cfg.grid_r, h, d));
            match sys.spectrum().first() {
                Some(&l) => out.push(greenleaf_check(&sv, l, h, d)),
                None => out.push(error_check("spectral", &CrError::DegenerateBasis("empty spectrum".into()), m, cfg)),
            }
        }
    } else if has(Suite::Spectral) {
        let basis = crate::pde::GalerkinBasis::build(m, &grid, &crate::pde::default_vars(m), d)?;
        let sys = crate::pde::assemble_sublaplacian(m, &grid, &basis)?;
        out.push(self_adjoint_check(m, &sys, cfg.grid_r, h, d));
        if let Some(&l) = sys.spectrum().first() {
            out.push(greenleaf_check(&sv, l, h, d));
        }
    }
    Ok(out)
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match parse_config(argv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage error: {e}");
            return USAGE_EXIT;
        }
    };
    let t = std::time::Instant::now();
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let json = report.to_json();
    match &cfg.output_path {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &json) {
                eprintln!("error: cannot write {}: {e}", p.display());
                return 1;
            }
        }
        None => print!("{json}"),
    }
    eprint!("{}", report.summary());
    eprintln!("elapsed {:.1} s", t.elapsed().as_secs_f64());
    report.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig> {
        parse_config(std::iter::once("crgeom").chain(args.iter().copied()))
    }

    #[test]
    fn defaults() {
        let c = cfg(&[]).unwrap();
        assert_eq!((c.n, c.grid_r, c.galerkin_d, c.h), (2, 16, 6, 1e-3));
        assert_eq!(c.suites.len(), 9);
        assert_eq!(c.manifold, ManifoldKind::Sphere);
    }

    #[test]
    fn suites_and_manifolds() {
        let c = cfg(&["--manifold", "sphere", "--n", "2", "--suites", "integral,cordes"]).unwrap();
        assert_eq!(c.suites, vec![Suite::Integral, Suite::Cordes]);
        let c = cfg(&["--manifold", "conformal_sphere", "--u", "0.1*x1", "--n", "2"]).unwrap();
        assert_eq!(c.conformal_u, "0.1*x1");
        assert!(build_model(&c).unwrap().conformal_factor().is_some());
        assert!(cfg(&["--manifold", "heisenberg", "--suites", "integral"]).is_err());
        let c = cfg(&["--manifold", "heisenberg"]).unwrap();
        assert_eq!(c.suites, vec![Suite::Frames, Suite::Pointwise]);
        assert!(cfg(&["--suites", "integral,bogus"]).is_err());
        assert!(cfg(&["--n", "1", "--suites", "schur_new"]).is_err());
        assert!(!cfg(&["--n", "1"]).unwrap().suites.contains(&Suite::Corollaries));
    }

    #[test]
    fn ranges() {
        assert!(cfg(&["--n", "0"]).is_err());
        assert!(cfg(&["--grid-r", "3"]).is_err());
        assert!(cfg(&["--h", "0"]).is_err());
        assert!(cfg(&["--h", "0.2"]).is_err());
        assert!(cfg(&["--degree", "1"]).is_err());
        assert!(cfg(&["--manifold", "conformal_sphere", "--u", "0.1*q7"]).is_err());
        assert!(cfg(&["--frobnicate"]).is_err());
    }

    #[test]
    fn file_config() {
        let f = parse_config_file("manifold = \"conformal_sphere\"\nn = 2\nsuites = [\"cordes\"]\ngrid_r = 6\n").unwrap();
        assert_eq!(f.grid_r, Some(6));
        assert!(parse_config_file("grid_r = \"x\"").is_err());
        assert!(parse_config_file("colour = 1").is_err());
        let dir = std::env::temp_dir().join(format!("crgeom-cfg-{}", std::process::id()));
        std::fs::write(&dir, "n = 1\nsuites = [\"frames\"]\n").unwrap();
        let c = cfg(&["--config", dir.to_str().unwrap(), "--seed", "5"]).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!((c.n, c.seed), (1, 5));
        assert_eq!(c.suites, vec![Suite::Frames]);
    }

    #[test]
    fn report_format_and_exit() {
        let c = cfg(&["--manifold", "heisenberg", "--suites", "frames"]).unwrap();
        let md = Metadata::default();
        let a = CheckResult::identity("b.x", "\"q\"", 1.0, 1.0, 1e-4, &md);
        let g = CheckResult::identity("a.y", "", 1.0, 2.0, 1e-4, &md).gated("no");
        let r = Report { config: c, model: "m".into(), battery: vec![], checks: vec![a.clone(), g] };
        let j = r.to_json();
        assert!(j.find("\"a.y\"").unwrap() < j.find("\"b.x\"").unwrap());
        assert!(j.contains("\\\"q\\\""));
        assert!(j.contains("1.0000000000000000e0"));
        assert!(r.overall_pass());
        assert_eq!(r.exit_code(), 2);
        let r2 = Report { checks: vec![a.clone()], ..r.clone() };
        assert_eq!(r2.exit_code(), 0);
        let mut f = a.clone();
        f.status = Status::Fail;
        f.pass = false;
        let r3 = Report { checks: vec![a, f], ..r };
        assert_eq!(r3.exit_code(), 1);
        assert!(!r3.overall_pass());
    }
}
