//! Experiment configs. Each subcommand's arguments double as the JSON config
//! block for `run --config`, tagged by `"command"`.

use crate::{CliError, Result};
use clap::{Args, Subcommand, ValueEnum};
use flatsaddle::funcore::DyadicLevel;
use serde::{Deserialize, Serialize};

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    /// Level-band partition of a library function with per-level counts.
    Partition(PartitionArgs),
    /// Alternation certificates: one supplied certificate, or seeded random ones.
    Certificate(CertificateArgs),
    /// Partial sums of sup^ε over the sign components of a function.
    Sjolin(SjolinArgs),
    /// Transversality checks on admissible pairs and Whitney tilings.
    Geometry(GeometryArgs),
    /// Dumps the admissible pairs of one setting.
    Admissible(AdmissibleArgs),
    /// Evaluates the extension operator on a frequency lattice.
    Extend(ExtendArgs),
    /// Bilinear norm scan over the prototype family.
    ScanBilinear(ScanBilinearArgs),
    /// Linear norm scan over the level-band strips of h'''.
    ScanStrip(ScanStripArgs),
    /// Wave packet decomposition, checks and incidence counts.
    Wavepacket(WavepacketArgs),
    /// Counting-inequality probe swept over R'.
    GeomProbe(GeomProbeArgs),
    /// The full acceptance suite.
    Accept(AcceptArgs),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Partition(_) => "partition",
            ExperimentConfig::Certificate(_) => "certificate",
            ExperimentConfig::Sjolin(_) => "sjolin",
            ExperimentConfig::Geometry(_) => "geometry",
            ExperimentConfig::Admissible(_) => "admissible",
            ExperimentConfig::Extend(_) => "extend",
            ExperimentConfig::ScanBilinear(_) => "scan-bilinear",
            ExperimentConfig::ScanStrip(_) => "scan-strip",
            ExperimentConfig::Wavepacket(_) => "wavepacket",
            ExperimentConfig::GeomProbe(_) => "geom-probe",
            ExperimentConfig::Accept(_) => "accept",
        }
    }

    /// Range and shape checks that clap cannot express. Errors name the
    /// offending field as `command.field`.
    pub fn validate(&self) -> Result<()> {
        let cmd = self.name();
        let f = |field: &str| format!("{cmd}.{field}");
        match self {
            ExperimentConfig::Partition(a) => {
                positive(&f("r"), a.r as f64)?;
                if a.lambda_min > 0 {
                    return Err(CliError::usage(f("lambda_min"), "exponent of the truncation level must be <= 0"));
                }
            }
            ExperimentConfig::Certificate(a) => match &a.points {
                Some(p) => {
                    if a.function.is_none() {
                        return Err(CliError::usage(f("fn"), "a supplied certificate needs --fn"));
                    }
                    if p.len() < 2 {
                        return Err(CliError::usage(f("points"), "at least two points are needed"));
                    }
                }
                None => {
                    need_seed(&f("seed"), a.seed)?;
                    positive(&f("instances"), a.instances as f64)?;
                    positive(&f("r_max"), a.r_max as f64)?;
                }
            },
            ExperimentConfig::Sjolin(a) => {
                if !(a.eps > 0.0 && a.eps <= 1.0) {
                    return Err(CliError::usage(f("eps"), "exponent must lie in (0, 1]"));
                }
            }
            ExperimentConfig::Geometry(g) => match &g.action {
                GeometryAction::CheckSizeofdeltas(a) => {
                    positive(&f("eps"), a.eps)?;
                    dyadic(&f("rho"), a.rho)?;
                    dyadic(&f("delta"), a.delta)?;
                    positive(&f("n"), a.n as f64)?;
                }
                GeometryAction::Algebra(a) => positive(&f("samples"), a.samples as f64)?,
                GeometryAction::Whitney(a) => {
                    if a.cell_exp >= 0 || a.cell_exp < -8 {
                        return Err(CliError::usage(f("cell_exp"), "resolution exponent must lie in [-8, -1]"));
                    }
                }
            },
            ExperimentConfig::Admissible(a) => {
                positive(&f("eps"), a.eps)?;
                dyadic(&f("rho"), a.rho)?;
                dyadic(&f("delta"), a.delta)?;
            }
            ExperimentConfig::Extend(a) => {
                a.density.validate(cmd)?;
                parse_region(&a.density.region).map_err(|m| CliError::usage(f("region"), m))?;
                parse_grid(&a.grid).map_err(|m| CliError::usage(f("grid"), m))?;
            }
            ExperimentConfig::ScanBilinear(a) => {
                // the bilinear estimate is stated for p > 5/3 only
                if !(a.p > 5.0 / 3.0) {
                    return Err(CliError::usage(f("p"), format!("p = {} must exceed 5/3", a.p)));
                }
                if a.deltas.len() < 3 {
                    return Err(CliError::usage(f("deltas"), "a scan needs at least three scales"));
                }
                for d in &a.deltas {
                    dyadic(&f("deltas"), *d)?;
                }
            }
            ExperimentConfig::ScanStrip(a) => {
                // the strip estimate needs r > 10/3 and 1/q' > 2/r
                if !(a.r > 10.0 / 3.0) {
                    return Err(CliError::usage(f("r"), format!("r = {} must exceed 10/3", a.r)));
                }
                if !(a.q >= 1.0 && 1.0 - 1.0 / a.q > 2.0 / a.r) {
                    return Err(CliError::usage(f("q"), format!("q = {} needs 1/q' > 2/r = {}", a.q, 2.0 / a.r)));
                }
            }
            ExperimentConfig::Wavepacket(w) => match &w.action {
                WavepacketAction::Decompose(a) | WavepacketAction::Check(a) => {
                    a.density.validate(cmd)?;
                    parse_region(&a.density.region).map_err(|m| CliError::usage(f("region"), m))?;
                    if !(a.r >= 1.0) {
                        return Err(CliError::usage(f("R"), "R must be at least 1"));
                    }
                    positive(&f("kappa"), a.kappa)?;
                    positive(&f("window"), a.window as f64)?;
                    if matches!(w.action, WavepacketAction::Check(_)) {
                        need_seed(&f("seed"), a.density.seed)?;
                    }
                }
                WavepacketAction::Count(a) | WavepacketAction::GeomProbe(a) => {
                    gamma(&f("gamma"), a.gamma)?;
                    dyadic(&f("R_prime"), a.r_prime)?;
                }
            },
            ExperimentConfig::GeomProbe(a) => {
                gamma(&f("gamma"), a.gamma)?;
                if a.r_primes.len() < 2 {
                    return Err(CliError::usage(f("R_prime"), "a sweep needs at least two values of R'"));
                }
                for r in &a.r_primes {
                    dyadic(&f("R_prime"), *r)?;
                }
            }
            ExperimentConfig::Accept(a) => {
                if let Some(only) = &a.only {
                    if let Some(bad) = only.iter().find(|&&c| !(1..=13).contains(&c)) {
                        return Err(CliError::usage(f("only"), format!("criterion {bad} is not run by the suite")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::usage(field, format!("{v} must be positive")))
    }
}

fn dyadic(field: &str, v: f64) -> Result<()> {
    match DyadicLevel::floor_of(v) {
        Some(l) if l.value::<f64>() == v => Ok(()),
        _ => Err(CliError::usage(field, format!("{v} is not a power of two"))),
    }
}

fn gamma(field: &str, g: f64) -> Result<()> {
    if g > 0.0 && g < 0.25 {
        Ok(())
    } else {
        Err(CliError::usage(field, format!("γ = {g} must lie in (0, 1/4)")))
    }
}

fn need_seed(field: &str, seed: Option<u64>) -> Result<()> {
    seed.map(|_| ()).ok_or_else(|| CliError::usage(field, "--seed is required for stochastic runs"))
}

/// Accepts `2^k`, a non-positive exponent, or a decimal power of two.
pub fn parse_dyadic(s: &str) -> std::result::Result<f64, String> {
    DyadicLevel::parse(s).map(|l| l.value::<f64>()).ok_or_else(|| format!("`{s}` is not a power of two"))
}

/// `x0,x1:y0,y1`
pub fn parse_region(s: &str) -> std::result::Result<((f64, f64), (f64, f64)), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let pair = |p: &str| -> std::result::Result<(f64, f64), String> {
        let v: Vec<f64> = p.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
        match v[..] {
            [a, b] if a < b => Ok((a, b)),
            _ => Err(format!("`{p}` must be `lo,hi` with lo < hi")),
        }
    };
    match parts[..] {
        [x, y] => Ok((pair(x)?, pair(y)?)),
        _ => Err(format!("`{s}` must have the form x0,x1:y0,y1")),
    }
}

/// `ox,oy,oz:nx,ny,nz:dx,dy,dz`
pub fn parse_grid(s: &str) -> std::result::Result<([f64; 3], [usize; 3], [f64; 3]), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("`{s}` must have the form ox,oy,oz:nx,ny,nz:dx,dy,dz"));
    }
    let triple = |p: &str| -> std::result::Result<[f64; 3], String> {
        let v: Vec<f64> = p.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
        v.try_into().map_err(|_| format!("`{p}` needs three components"))
    };
    let o = triple(parts[0])?;
    let n = triple(parts[1])?;
    let d = triple(parts[2])?;
    if n.iter().any(|&k| k < 1.0 || k.fract() != 0.0) {
        return Err("grid sizes must be positive integers".into());
    }
    if d.iter().any(|&h| !(h > 0.0)) {
        return Err("grid spacings must be positive".into());
    }
    Ok((o, n.map(|k| k as usize), d))
}

// ---------------------------------------------------------------- 1D

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionArgs {
    /// Library key: oscflat, exp-flat, cubic-sixth, monomial:m, poly:[c0,c1,...].
    #[arg(long = "fn")]
    #[serde(rename = "fn")]
    pub function: String,
    #[arg(long, default_value_t = 3)]
    pub r: usize,
    /// Exponent k of the truncation level 2^k.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_min: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParityArg {
    EvenFirst,
    OddFirst,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateArgs {
    /// Function of a supplied certificate.
    #[arg(long = "fn")]
    #[serde(rename = "fn", default)]
    pub function: Option<String>,
    /// Comma-separated increasing points of a supplied certificate.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(default)]
    pub points: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pivot: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gap: f64,
    #[arg(long, value_enum, default_value_t = ParityArg::EvenFirst)]
    pub parity: ParityArg,
    /// Random instances to draw when no certificate is supplied.
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    /// Instance `i` uses `r = 1 + i mod r_max`.
    #[arg(long, default_value_t = 4)]
    pub r_max: usize,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SjolinArgs {
    #[arg(long = "fn")]
    #[serde(rename = "fn")]
    pub function: String,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
}

// ---------------------------------------------------------------- geometry

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryArgs {
    #[command(subcommand)]
    #[serde(flatten)]
    pub action: GeometryAction,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum GeometryAction {
    /// Transversality size brackets on every admissible pair of a setting.
    CheckSizeofdeltas(SizeArgs),
    /// The Γ identity and the τ-gap closed form on random tuples.
    Algebra(AlgebraArgs),
    /// Exact-once coverage of the strip and rectangle decompositions.
    Whitney(WhitneyArgs),
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeArgs {
    #[arg(long, default_value = "cubic-sixth")]
    pub surface: String,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_parser = parse_dyadic, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long, value_parser = parse_dyadic, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 16)]
    pub c0: u32,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraArgs {
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhitneyArgs {
    /// Exponent of the test resolution.
    #[arg(long, default_value_t = -6, allow_negative_numbers = true)]
    pub cell_exp: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Type1,
    Type2,
    Both,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleArgs {
    #[arg(long, default_value = "cubic-sixth")]
    pub surface: String,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, value_parser = parse_dyadic, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long, value_parser = parse_dyadic, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 8)]
    pub c0: u32,
    #[arg(long = "type", value_enum, default_value_t = KindArg::Both)]
    #[serde(rename = "type")]
    pub kind: KindArg,
    /// Pairs written to the dump; all of them are counted.
    #[arg(long, default_value_t = 1000)]
    pub limit: usize,
}

// ---------------------------------------------------------------- extension

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityKind {
    Constant,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeArg {
    Unit,
    Bump,
}

/// A surface `xy + ε h(y)` and a density on a rectangle.
#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityArgs {
    /// Library key of the perturbation h.
    #[arg(long, default_value = "cubic-sixth")]
    pub surface: String,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// `x0,x1:y0,y1`
    #[arg(long, default_value = "0.1,0.35:0.2,0.45", allow_hyphen_values = true)]
    pub region: String,
    #[arg(long, value_enum, default_value_t = DensityKind::Constant)]
    pub density: DensityKind,
    /// Density cells per axis.
    #[arg(long, default_value_t = 4)]
    pub cells: usize,
    #[arg(long, value_enum, default_value_t = AmplitudeArg::Unit)]
    pub amplitude: AmplitudeArg,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DensityArgs {
    fn validate(&self, cmd: &str) -> Result<()> {
        positive(&format!("{cmd}.cells"), self.cells as f64)?;
        if self.density == DensityKind::Random {
            need_seed(&format!("{cmd}.seed"), self.seed)?;
        }
        Ok(())
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub density: DensityArgs,
    /// `ox,oy,oz:nx,ny,nz:dx,dy,dz`
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// File name of the binary field inside the output directory.
    #[arg(long = "field", default_value = "field.bin")]
    pub field: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormArg {
    Unscaled,
    Scaled,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBilinearArgs {
    #[arg(long, default_value = "cubic-sixth")]
    pub surface: String,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_dyadic, default_value = "2^-1,2^-2,2^-3,2^-4")]
    pub deltas: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    #[arg(long, default_value_t = 8.0)]
    pub reach: f64,
    #[arg(long, value_enum, default_value_t = FormArg::Unscaled)]
    pub form: FormArg,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanStripArgs {
    /// Library key of h; the strips are the level bands of h'''.
    #[arg(long, default_value = "poly:[0,0,0,0,0.041666666666666664]")]
    pub surface: String,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 4.0)]
    pub r: f64,
    #[arg(long, default_value_t = 2.5)]
    pub q: f64,
    /// Exponent of the smallest level band of h'''.
    #[arg(long, default_value_t = -5, allow_negative_numbers = true)]
    pub lambda_min: i32,
    #[arg(long, default_value_t = 12)]
    pub points: usize,
    #[arg(long, default_value_t = 12.0)]
    pub reach: f64,
}

// ---------------------------------------------------------------- packets

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavepacketArgs {
    #[command(subcommand)]
    #[serde(flatten)]
    pub action: WavepacketAction,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum WavepacketAction {
    /// Packet manifest (index, coefficient) of one density.
    Decompose(PacketArgs),
    /// Reconstruction, localisation, decay, orthogonality and coefficient checks.
    Check(PacketArgs),
    /// Shell incidence counts of the tube-fan fixture.
    Count(FanArgs),
    /// One evaluation of the counting inequality on the tube-fan fixture.
    GeomProbe(FanArgs),
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub density: DensityArgs,
    #[arg(long = "R", default_value_t = 8.0)]
    #[serde(rename = "R")]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Packets are kept for |η|∞ <= window·R.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanArgs {
    #[arg(long = "R-prime", value_parser = parse_dyadic, default_value = "8")]
    #[serde(rename = "R_prime")]
    pub r_prime: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub nu1: u32,
    #[arg(long, default_value_t = 1)]
    pub nu2: u32,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomProbeArgs {
    #[arg(long = "R-prime", value_delimiter = ',', value_parser = parse_dyadic, default_value = "8,16,32")]
    #[serde(rename = "R_prime")]
    pub r_primes: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub nu1: u32,
    #[arg(long, default_value_t = 1)]
    pub nu2: u32,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptArgs {
    #[arg(long)]
    pub seed: u64,
    /// Run only these criteria (comma-separated ids).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub only: Option<Vec<u32>>,
}
