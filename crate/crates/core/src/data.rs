//! Datasets, synthetic generators, noise injection and the CSV format.
//!
//! CSV layout: a header `x0,...,x{d-1},y` optionally followed by
//! `epsilon,corrupted`, then one row per sample. Floats are written in their
//! shortest round-trip form and `corrupted` is `0` or `1`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_kernel_matrix, KernelParams};
use crate::linalg::cholesky_lower;
use crate::rng::SeededRng;
use crate::stats;

/// Row-major `N×d` input locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    data: Vec<f64>,
    dim: usize,
}

impl Inputs {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("input dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Inputs { data, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged input rows".into()));
        }
        Inputs::new(rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn select(&self, idx: &[usize]) -> Inputs {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Inputs { data, dim: self.dim }
    }
}

/// Ground-truth corruption annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Injected perturbation per label; zero for clean labels.
    pub epsilon: Vec<f64>,
    pub corrupted: Vec<bool>,
}

impl Truth {
    pub fn clean(n: usize) -> Self {
        Truth {
            epsilon: vec![0.0; n],
            corrupted: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.epsilon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilon.is_empty()
    }

    /// Squared perturbations, the regression target for the learned noise.
    pub fn squared_noise(&self) -> Vec<f64> {
        self.epsilon.iter().map(|e| e * e).collect()
    }

    pub fn n_corrupted(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }
}

/// Inputs plus observed labels.
///
/// Labels are stored as given; `y_center` is their mean and
/// [`Dataset::centered_labels`] is what the zero-mean GP prior is fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Inputs,
    y: Vec<f64>,
    y_center: f64,
    truth: Option<Truth>,
}

impl Dataset {
    pub fn new(inputs: Inputs, y: Vec<f64>, truth: Option<Truth>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input rows but {} labels",
                inputs.len(),
                y.len()
            )));
        }
        if !inputs.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        if let Some(t) = &truth {
            if t.epsilon.len() != y.len() || t.corrupted.len() != y.len() {
                return Err(Error::DimensionMismatch(
                    "truth annotations differ in length from labels".into(),
                ));
            }
        }
        let y_center = stats::mean(&y);
        Ok(Dataset {
            inputs,
            y,
            y_center,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    /// Labels as observed (not centered).
    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn y_center(&self) -> f64 {
        self.y_center
    }

    pub fn centered_labels(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.y.iter().map(|v| v - self.y_center))
    }

    /// Maps a prediction made against centered labels back to label units.
    pub fn uncenter(&self, centered_prediction: f64) -> f64 {
        centered_prediction + self.y_center
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    pub fn without_truth(&self) -> Dataset {
        Dataset {
            truth: None,
            ..self.clone()
        }
    }
}

/// The smooth test function of the first 1-D demonstration,
/// `cos(3πx) + sin(πx) + 2x²`.
pub fn example1_function(x: f64) -> f64 {
    (3.0 * PI * x).cos() + (PI * x).sin() + 2.0 * x * x
}

pub const EXAMPLE1_N: usize = 24;
pub const EXAMPLE1_CORRUPTED: usize = 10;
pub const EXAMPLE1_BASE_STD: f64 = 0.05;
pub const EXAMPLE1_CONTAMINATION_STD: f64 = 0.75;

fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Example 1: 24 grid points on `[-1, 1]`, base noise std 0.05 on every
/// label, and 10 labels contaminated with std 0.75.
///
/// Draw order: 24 base-noise normals in index order, then the corrupted
/// subset, then one contamination normal per corrupted index in ascending
/// order. `epsilon` records the contamination only.
pub fn gen_example1(seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let xs = grid(EXAMPLE1_N, -1.0, 1.0);
    let mut y: Vec<f64> = xs
        .iter()
        .map(|&x| example1_function(x) + rng.normal(EXAMPLE1_BASE_STD))
        .collect();
    let mut truth = Truth::clean(EXAMPLE1_N);
    for i in rng.choose(EXAMPLE1_N, EXAMPLE1_CORRUPTED) {
        let e = rng.normal(EXAMPLE1_CONTAMINATION_STD);
        y[i] += e;
        truth.epsilon[i] = e;
        truth.corrupted[i] = true;
    }
    let inputs = Inputs::new(xs, 1).expect("1-D grid");
    Dataset::new(inputs, y, Some(truth)).expect("generator output is valid")
}

/// Example-1 function sampled on an `n`-point grid over `[-1, 1]` with
/// i.i.d. base noise and no contamination.
pub fn gen_grid(n: usize, base_noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SeededRng::new(seed);
    let xs = grid(n, -1.0, 1.0);
    let y = xs
        .iter()
        .map(|&x| example1_function(x) + rng.normal(base_noise_std))
        .collect();
    Dataset::new(Inputs::new(xs, 1)?, y, Some(Truth::clean(n)))
}

/// One draw of a zero-mean GP with the given RBF kernel at `n` points
/// uniform in `[0, 1]^dim`, plus i.i.d. base noise.
///
/// Draw order: `n·dim` uniforms (row-major), `n` latent normals, `n`
/// base-noise normals. The latent sample is `L z` with `L` the Cholesky
/// factor of `K + 1e-8·s²·I`.
pub fn gen_gp_sample(
    kernel: &KernelParams,
    n: usize,
    dim: usize,
    base_noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SeededRng::new(seed);
    let inputs = Inputs::new((0..n * dim).map(|_| rng.uniform()).collect(), dim)?;
    let mut k = build_kernel_matrix(kernel, &inputs)?;
    for i in 0..n {
        k[(i, i)] += 1e-8 * kernel.signal_variance;
    }
    let l = cholesky_lower(&k).map_err(|pivot| Error::NotPositiveDefinite {
        pivot,
        jitter: 1e-8 * kernel.signal_variance,
    })?;
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.standard_normal()));
    let f = l * z;
    let y = f.iter().map(|v| v + rng.normal(base_noise_std)).collect();
    Dataset::new(inputs, y, Some(Truth::clean(n)))
}

/// Mean functions for the 1-D heteroscedastic generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    /// `amplitude · sin(2π x)`.
    Sine { amplitude: f64 },
    /// `2 (exp(-30 (x - 1/4)²) + sin(π x²)) - 2`.
    BumpSine,
}

impl MeanFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            MeanFunction::Sine { amplitude } => amplitude * (2.0 * PI * x).sin(),
            MeanFunction::BumpSine => {
                2.0 * ((-30.0 * (x - 0.25).powi(2)).exp() + (PI * x * x).sin()) - 2.0
            }
        }
    }
}

/// Input-dependent standard deviation of the base noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    /// Linear from `start` at the left end of the range to `end` at the right.
    Linear { start: f64, end: f64 },
    /// `exp(sin(2π x))`.
    ExpSine,
}

impl NoiseProfile {
    pub fn std_at(&self, x: f64, lo: f64, hi: f64) -> f64 {
        match *self {
            NoiseProfile::Linear { start, end } => start + (end - start) * (x - lo) / (hi - lo),
            NoiseProfile::ExpSine => (2.0 * PI * x).sin().exp(),
        }
    }
}

/// Parameters for [`gen_heteroscedastic`].
///
/// The shipped defaults are reconstructions of commonly used benchmark
/// curves, not values taken from any one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub x_min: f64,
    pub x_max: f64,
    pub mean: MeanFunction,
    pub noise: NoiseProfile,
    pub contamination_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeteroscedasticSetup {
    Goldberg,
    Le,
}

impl HeteroscedasticSetup {
    /// Reconstructed default curve for this setup.
    pub fn default_params(self) -> GeneratorParams {
        match self {
            HeteroscedasticSetup::Goldberg => GeneratorParams {
                x_min: 0.0,
                x_max: 1.0,
                mean: MeanFunction::Sine { amplitude: 2.0 },
                noise: NoiseProfile::Linear {
                    start: 0.5,
                    end: 1.5,
                },
                contamination_std: 3.0,
            },
            HeteroscedasticSetup::Le => GeneratorParams {
                x_min: 0.0,
                x_max: 1.0,
                mean: MeanFunction::BumpSine,
                noise: NoiseProfile::ExpSine,
                contamination_std: 3.0,
            },
        }
    }

    pub fn default_size(self) -> (usize, usize) {
        match self {
            HeteroscedasticSetup::Goldberg => (30, 20),
            HeteroscedasticSetup::Le => (50, 33),
        }
    }
}

impl std::str::FromStr for HeteroscedasticSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goldberg" => Ok(HeteroscedasticSetup::Goldberg),
            "le" => Ok(HeteroscedasticSetup::Le),
            other => Err(Error::Config(format!("unknown generator '{other}'"))),
        }
    }
}

/// `n` grid points with input-dependent base noise; exactly `n_corrupt`
/// seeded labels receive an extra contamination draw.
///
/// Draw order matches [`gen_example1`].
pub fn gen_heteroscedastic(
    setup: HeteroscedasticSetup,
    n: usize,
    n_corrupt: usize,
    params: Option<&GeneratorParams>,
    seed: u64,
) -> Result<Dataset> {
    let params = params.ok_or_else(|| {
        Error::Config(format!("generator parameters required for {setup:?} setup"))
    })?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if n_corrupt > n {
        return Err(Error::Config(format!(
            "cannot corrupt {n_corrupt} of {n} labels"
        )));
    }
    if !(params.x_max > params.x_min) {
        return Err(Error::Config("generator x range is empty".into()));
    }
    let mut rng = SeededRng::new(seed);
    let xs = grid(n, params.x_min, params.x_max);
    let mut y: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let std = params.noise.std_at(x, params.x_min, params.x_max);
            params.mean.eval(x) + rng.normal(std)
        })
        .collect();
    let mut truth = Truth::clean(n);
    for i in rng.choose(n, n_corrupt) {
        let e = rng.normal(params.contamination_std);
        y[i] += e;
        truth.epsilon[i] = e;
        truth.corrupted[i] = true;
    }
    Dataset::new(Inputs::new(xs, 1)?, y, Some(truth))
}

/// Label-corruption protocol: `rate` is the fraction of labels corrupted and
/// `level` the perturbation std relative to the std of the pristine labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInjectionSpec {
    pub rate: f64,
    pub level: f64,
    pub seed: u64,
}

impl NoiseInjectionSpec {
    /// `round(rate·N)` with halves rounded up.
    pub fn corrupted_count(&self, n: usize) -> usize {
        ((self.rate * n as f64 + 0.5).floor() as usize).min(n)
    }
}

/// Corrupts `round(rate·N)` labels chosen without replacement by adding
/// `N(0, (level·std(y))²)` draws; all other labels are left untouched.
///
/// Any existing truth annotation is replaced. The std is the population std
/// of the incoming labels.
pub fn inject_noise(clean: &Dataset, spec: &NoiseInjectionSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::Config(format!(
            "noise rate must lie in [0, 1], got {}",
            spec.rate
        )));
    }
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::Config(format!(
            "noise level must be non-negative, got {}",
            spec.level
        )));
    }
    let n = clean.len();
    let std = spec.level * stats::std_dev(clean.labels());
    let mut rng = SeededRng::new(spec.seed);
    let mut y = clean.labels().to_vec();
    let mut truth = Truth::clean(n);
    for i in rng.choose(n, spec.corrupted_count(n)) {
        let e = rng.normal(std);
        y[i] += e;
        truth.epsilon[i] = e;
        truth.corrupted[i] = true;
    }
    Dataset::new(clean.inputs.clone(), y, Some(truth))
}

fn format_float(v: f64) -> String {
    // `Debug` yields the shortest string that parses back to the same bits.
    format!("{v:?}")
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    write_records(dataset, &mut w).map_err(|e| csv_io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes to CSV text.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_records(dataset, &mut w).expect("writing to memory cannot fail");
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

fn write_records<W: std::io::Write>(
    dataset: &Dataset,
    w: &mut csv::Writer<W>,
) -> std::result::Result<(), csv::Error> {
    let d = dataset.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if dataset.truth.is_some() {
        header.push("epsilon".into());
        header.push("corrupted".into());
    }
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.inputs.row(i).iter().map(|&v| format_float(v)).collect();
        row.push(format_float(dataset.y[i]));
        if let Some(t) = &dataset.truth {
            row.push(format_float(t.epsilon[i]));
            row.push(if t.corrupted[i] { "1" } else { "0" }.into());
        }
        w.write_record(&row)?;
    }
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(file, path)
}

/// Parses CSV text; `origin` is used in error messages.
pub fn parse_dataset<R: std::io::Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let y_col = names
        .iter()
        .position(|&h| h == "y")
        .ok_or_else(|| parse_err(1, "header has no 'y' column".into()))?;
    if y_col == 0 {
        return Err(parse_err(1, "header needs at least one input column before 'y'".into()));
    }
    for (j, name) in names[..y_col].iter().enumerate() {
        if *name != format!("x{j}") {
            return Err(parse_err(1, format!("expected column 'x{j}', found '{name}'")));
        }
    }
    let has_truth = match &names[y_col + 1..] {
        [] => false,
        ["epsilon", "corrupted"] => true,
        other => {
            return Err(parse_err(
                1,
                format!("unexpected trailing columns {other:?}; expected 'epsilon,corrupted'"),
            ))
        }
    };
    let dim = y_col;
    let width = names.len();

    let mut xs = Vec::new();
    let mut y = Vec::new();
    let mut truth = Truth {
        epsilon: Vec::new(),
        corrupted: Vec::new(),
    };
    for record in r.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("row has {} fields, header has {width}", record.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            let cell = record[j].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(
                    line,
                    format!("column '{}' holds non-finite or non-numeric value '{cell}'", names[j]),
                )),
            }
        };
        for j in 0..dim {
            xs.push(num(j)?);
        }
        y.push(num(y_col)?);
        if has_truth {
            truth.epsilon.push(num(y_col + 1)?);
            truth.corrupted.push(match record[y_col + 2].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        line,
                        format!("'corrupted' must be 0 or 1, found '{other}'"),
                    ))
                }
            });
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(Inputs::new(xs, dim)?, y, has_truth.then_some(truth))
}
