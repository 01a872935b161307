//! Binary tensor container, artifact bundles, CSV emission and run
//! configuration files.
//!
//! Tensor record layout (all little-endian):
//!
//! ```text
//! b"LTEN" | version: u16 | ndim: u16 | dims: ndim x u64 | payload: prod(dims) x f64
//! ```
//!
//! A bundle is a sequence of records. Model artifacts start with a `meta`
//! vector whose first entry is an artifact kind code.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::attacks::ToyClassifier;
use crate::diffusion::{Denoiser, GaussianOracleDenoiser, MlpDenoiser, Sampler, Schedule};
use crate::error::{ensure, LoridError, Result};
use crate::nn::{Activation, Mlp};
use crate::purify::{LoopOrder, LoridConfig};
use crate::tensor::{Matrix, Tensor};
use crate::tucker::{RankPolicy, TensorizationLayout, TuckerBasis, TUCKER_MODES};

pub const MAGIC: &[u8; 4] = b"LTEN";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_tensor<W: Write>(w: &mut W, x: &Tensor) -> Result<()> {
    ensure!(
        x.order() <= u16::MAX as usize,
        InvalidArgument,
        "order {} does not fit the header",
        x.order()
    );
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(x.order() as u16).to_le_bytes())?;
    for &d in x.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * x.len());
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => LoridError::Format(format!("truncated {what}")),
        _ => LoridError::Io(e),
    })
}

// Returns None on a clean end of stream before the magic.
fn read_tensor_opt<R: Read>(r: &mut R) -> Result<Option<Tensor>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(LoridError::Format("truncated magic".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    ensure!(&magic == MAGIC, Format, "bad magic {magic:?}");
    let mut b2 = [0u8; 2];
    read_exact_or(r, &mut b2, "version")?;
    let version = u16::from_le_bytes(b2);
    ensure!(version != 0, Format, "version 0 is not a valid format version");
    ensure!(
        version <= FORMAT_VERSION,
        Format,
        "format version {version} is newer than supported version {FORMAT_VERSION}"
    );
    read_exact_or(r, &mut b2, "ndim")?;
    let ndim = u16::from_le_bytes(b2) as usize;
    ensure!(ndim >= 1, Format, "ndim must be >= 1");
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let mut b8 = [0u8; 8];
        read_exact_or(r, &mut b8, "dims")?;
        let d = u64::from_le_bytes(b8);
        ensure!(d >= 1, Format, "zero-sized dimension");
        let d = usize::try_from(d).map_err(|_| LoridError::Format(format!("dimension {d} overflows")))?;
        count = count
            .checked_mul(d)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| LoridError::Format("element count overflows".into()))?;
        shape.push(d);
    }
    let mut data = Vec::with_capacity(count.min(1 << 24));
    let mut chunk = vec![0u8; 8 * 4096];
    let mut left = count;
    while left > 0 {
        let take = left.min(4096);
        let buf = &mut chunk[..8 * take];
        read_exact_or(r, buf, "payload")?;
        data.extend(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
        left -= take;
    }
    Ok(Some(Tensor::new(shape, data)?))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    read_tensor_opt(r)?.ok_or_else(|| LoridError::Format("empty stream".into()))
}

pub fn save_tensor(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    save_bundle(path, std::slice::from_ref(x))
}

/// Load a file holding exactly one tensor record.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut b = load_bundle(path)?;
    ensure!(b.len() == 1, Format, "expected one tensor record, found {}", b.len());
    Ok(b.pop().unwrap())
}

pub fn save_bundle(path: impl AsRef<Path>, items: &[Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in items {
        write_tensor(&mut w, x)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(t) = read_tensor_opt(&mut r)? {
        out.push(t);
    }
    ensure!(!out.is_empty(), Format, "file holds no tensor records");
    Ok(out)
}

/// Class labels stored as a vector of small integers.
pub fn labels_to_tensor(labels: &[usize]) -> Tensor {
    Tensor::vector(labels.iter().map(|&y| y as f64).collect())
}

pub fn tensor_to_labels(t: &Tensor) -> Result<Vec<usize>> {
    ensure!(t.order() == 1, Shape, "labels must be a vector, got {:?}", t.shape());
    t.data()
        .iter()
        .map(|&v| {
            ensure!(v >= 0.0 && v.fract() == 0.0 && v < 1e9, Format, "label {v} is not a class index");
            Ok(v as usize)
        })
        .collect()
}

/// Artifact kind codes stored in the first meta entry.
pub mod kind {
    pub const MLP_DENOISER: u32 = 1;
    pub const TUCKER_BASIS: u32 = 2;
    pub const GAUSSIAN_DENOISER: u32 = 3;
    pub const CLASSIFIER: u32 = 4;
}

struct MetaReader<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> MetaReader<'a> {
    fn new(meta: &'a Tensor) -> Self {
        Self {
            values: meta.data(),
            pos: 0,
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let v = *self
            .values
            .get(self.pos)
            .ok_or_else(|| LoridError::Format("meta record too short".into()))?;
        ensure!(v >= 0.0 && v.fract() == 0.0 && v < 9.0e15, Format, "meta entry {v} is not a count");
        self.pos += 1;
        Ok(v as usize)
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }
}

fn push_list(meta: &mut Vec<f64>, v: &[usize]) {
    meta.push(v.len() as f64);
    meta.extend(v.iter().map(|&x| x as f64));
}

fn expect_kind(items: &[Tensor], want: u32) -> Result<MetaReader<'_>> {
    ensure!(!items.is_empty(), Format, "empty artifact");
    let mut m = MetaReader::new(&items[0]);
    let k = m.usize()?;
    ensure!(k == want as usize, Format, "artifact kind {k}, expected {want}");
    Ok(m)
}

fn network_records(net: &Mlp) -> Tensor {
    Tensor::vector(net.params().to_vec())
}

fn activation_of(code: usize) -> Result<Activation> {
    u8::try_from(code)
        .ok()
        .and_then(Activation::from_code)
        .ok_or_else(|| LoridError::Format(format!("unknown activation code {code}")))
}

pub fn save_mlp_denoiser(path: impl AsRef<Path>, den: &MlpDenoiser) -> Result<()> {
    let net = den.network();
    let mut meta = vec![kind::MLP_DENOISER as f64, net.activation().code() as f64, den.steps() as f64];
    push_list(&mut meta, den.sample_shape());
    push_list(&mut meta, net.sizes());
    save_bundle(path, &[Tensor::vector(meta), network_records(net)])
}

fn mlp_denoiser_from(items: &[Tensor]) -> Result<MlpDenoiser> {
    let mut m = expect_kind(items, kind::MLP_DENOISER)?;
    let act = activation_of(m.usize()?)?;
    let steps = m.usize()?;
    let shape = m.list()?;
    let sizes = m.list()?;
    ensure!(items.len() == 2, Format, "denoiser bundle needs 2 records, found {}", items.len());
    let net = Mlp::from_params(sizes, act, items[1].data().to_vec())?;
    MlpDenoiser::from_network(net, shape, steps)
}

pub fn save_gaussian_denoiser(path: impl AsRef<Path>, den: &GaussianOracleDenoiser) -> Result<()> {
    let mut meta = vec![kind::GAUSSIAN_DENOISER as f64];
    push_list(&mut meta, den.sample_shape());
    let d = den.dim();
    let cov = den.covariance();
    save_bundle(
        path,
        &[
            Tensor::vector(meta),
            Tensor::vector(den.mean().to_vec()),
            Tensor::new(vec![d, d], cov.into_data())?,
        ],
    )
}

fn gaussian_denoiser_from(items: &[Tensor], schedule: &Schedule) -> Result<GaussianOracleDenoiser> {
    let mut m = expect_kind(items, kind::GAUSSIAN_DENOISER)?;
    let shape = m.list()?;
    ensure!(items.len() == 3, Format, "gaussian bundle needs 3 records, found {}", items.len());
    let d = items[1].len();
    ensure!(items[2].shape() == [d, d], Format, "covariance shape {:?}", items[2].shape());
    let cov = Matrix::new(d, d, items[2].data().to_vec())?;
    GaussianOracleDenoiser::with_covariance(&shape, items[1].data().to_vec(), &cov, schedule.clone())
}

/// A denoiser loaded from disk, whichever kind was saved.
#[derive(Debug, Clone)]
pub enum DenoiserArtifact {
    Mlp(MlpDenoiser),
    Gaussian(GaussianOracleDenoiser),
}

impl DenoiserArtifact {
    pub fn sample_shape(&self) -> &[usize] {
        match self {
            DenoiserArtifact::Mlp(d) => d.sample_shape(),
            DenoiserArtifact::Gaussian(d) => d.sample_shape(),
        }
    }
}

impl Denoiser for DenoiserArtifact {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        match self {
            DenoiserArtifact::Mlp(d) => d.predict_eps(x_t, t),
            DenoiserArtifact::Gaussian(d) => d.predict_eps(x_t, t),
        }
    }
}

pub fn save_denoiser(path: impl AsRef<Path>, den: &DenoiserArtifact) -> Result<()> {
    match den {
        DenoiserArtifact::Mlp(d) => save_mlp_denoiser(path, d),
        DenoiserArtifact::Gaussian(d) => save_gaussian_denoiser(path, d),
    }
}

/// Load either denoiser kind. MLP files must agree with `schedule` on `T`.
pub fn load_denoiser(path: impl AsRef<Path>, schedule: &Schedule) -> Result<DenoiserArtifact> {
    let items = load_bundle(path)?;
    let code = MetaReader::new(&items[0]).usize()?;
    match code as u32 {
        kind::MLP_DENOISER => {
            let d = mlp_denoiser_from(&items)?;
            ensure!(
                d.steps() == schedule.steps(),
                Config,
                "denoiser trained for T = {} but schedule has T = {}",
                d.steps(),
                schedule.steps()
            );
            Ok(DenoiserArtifact::Mlp(d))
        }
        kind::GAUSSIAN_DENOISER => Ok(DenoiserArtifact::Gaussian(gaussian_denoiser_from(&items, schedule)?)),
        other => Err(LoridError::Format(format!("artifact kind {other} is not a denoiser"))),
    }
}

pub fn save_basis(path: impl AsRef<Path>, basis: &TuckerBasis) -> Result<()> {
    let l = basis.layout();
    let meta = vec![
        kind::TUCKER_BASIS as f64,
        l.height as f64,
        l.width as f64,
        l.channels as f64,
        l.patch as f64,
    ];
    let mut items = vec![Tensor::vector(meta), Tensor::vector(basis.discarded_energy().to_vec())];
    for u in basis.factors() {
        items.push(Tensor::new(vec![u.rows(), u.cols()], u.data().to_vec())?);
    }
    save_bundle(path, &items)
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<TuckerBasis> {
    let items = load_bundle(path)?;
    let mut m = expect_kind(&items, kind::TUCKER_BASIS)?;
    let (h, w, c, p) = (m.usize()?, m.usize()?, m.usize()?, m.usize()?);
    ensure!(
        items.len() == 2 + TUCKER_MODES,
        Format,
        "basis bundle needs {} records, found {}",
        2 + TUCKER_MODES,
        items.len()
    );
    let layout = TensorizationLayout::new(&[h, w, c], p)?;
    let factors = items[2..]
        .iter()
        .map(|t| {
            ensure!(t.order() == 2, Format, "factor must be a matrix, got {:?}", t.shape());
            Matrix::new(t.shape()[0], t.shape()[1], t.data().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    TuckerBasis::from_parts(layout, factors, items[1].data().to_vec())
}

pub fn save_classifier(path: impl AsRef<Path>, clf: &ToyClassifier) -> Result<()> {
    let net = clf.network();
    let mut meta = vec![kind::CLASSIFIER as f64, net.activation().code() as f64];
    push_list(&mut meta, clf.input_shape());
    push_list(&mut meta, net.sizes());
    save_bundle(path, &[Tensor::vector(meta), network_records(net)])
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<ToyClassifier> {
    let items = load_bundle(path)?;
    let mut m = expect_kind(&items, kind::CLASSIFIER)?;
    let act = activation_of(m.usize()?)?;
    let shape = m.list()?;
    let sizes = m.list()?;
    ensure!(items.len() == 2, Format, "classifier bundle needs 2 records, found {}", items.len());
    let net = Mlp::from_params(sizes, act, items[1].data().to_vec())?;
    ToyClassifier::from_network(net, shape)
}

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<T: ToString>(&mut self, row: &[T]) {
        self.rows.push(row.iter().map(ToString::to_string).collect());
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| LoridError::Io(std::io::Error::other(e));
        out.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            ensure!(
                r.len() == self.header.len(),
                Shape,
                "row of {} cells under {} columns",
                r.len(),
                self.header.len()
            );
            out.write_record(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

/// Plain-text `key = value` run configuration. `#` starts a comment.
///
/// | key          | default    | meaning                                  |
/// |--------------|------------|------------------------------------------|
/// | `T`          | 1000       | diffusion steps                          |
/// | `beta_start` | 1e-4       | first beta                               |
/// | `beta_end`   | 0.02       | last beta                                |
/// | `t`          | 100        | total purified time step                 |
/// | `L`          | 1          | loops                                    |
/// | `use_tucker` | false      | project with the Tucker basis first      |
/// | `sampler`    | ancestral  | `ancestral` or `skip`                    |
/// | `skip_k`     | 10         | jump size of the skip sampler            |
/// | `loop_order` | diffuse_first | or `denoise_first`                    |
/// | `patch`      | 4          | tensorization patch side                 |
/// | `eta`        | 0.95       | retained energy per Tucker mode          |
/// | `ranks`      | (unset)    | explicit ranks `r1,r2,r3,r4`; excludes `eta` |
/// | `clamp`      | (unset)    | final output range `lo,hi`               |
/// | `trials`     | 1000       | Monte Carlo trials for checks            |
/// | `seed`       | required   | base seed                                |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub t: usize,
    pub loops: usize,
    pub use_tucker: bool,
    pub sampler: Sampler,
    pub order: LoopOrder,
    pub patch: usize,
    pub rank_policy: RankPolicy,
    pub clamp: Option<(f64, f64)>,
    pub trials: usize,
    pub seed: u64,
}

pub const CONFIG_KEYS: &[&str] = &[
    "T",
    "beta_start",
    "beta_end",
    "t",
    "L",
    "use_tucker",
    "sampler",
    "skip_k",
    "loop_order",
    "patch",
    "eta",
    "ranks",
    "clamp",
    "trials",
    "seed",
];
pub const REQUIRED_KEYS: &[&str] = &["seed"];

impl RunConfig {
    /// Defaults for every optional key with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            steps: crate::diffusion::schedule::DEFAULT_STEPS,
            beta_start: crate::diffusion::schedule::DEFAULT_BETA_START,
            beta_end: crate::diffusion::schedule::DEFAULT_BETA_END,
            t: 100,
            loops: 1,
            use_tucker: false,
            sampler: Sampler::Ancestral,
            order: LoopOrder::DiffuseThenDenoise,
            patch: 4,
            rank_policy: RankPolicy::default(),
            clamp: None,
            trials: 1000,
            seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LoridError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            ensure!(CONFIG_KEYS.contains(&k), Config, "line {}: unknown key '{k}'", i + 1);
            ensure!(!seen.iter().any(|(s, _, _)| s == k), Config, "line {}: duplicate key '{k}'", i + 1);
            ensure!(!v.is_empty(), Config, "line {}: empty value for '{k}'", i + 1);
            seen.push((k.to_string(), v.to_string(), i + 1));
        }
        for req in REQUIRED_KEYS {
            ensure!(seen.iter().any(|(k, _, _)| k == req), Config, "missing required key '{req}'");
        }
        let get = |key: &str| seen.iter().find(|(k, _, _)| k == key);
        fn num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
            v.parse()
                .map_err(|_| LoridError::Config(format!("line {line}: cannot parse '{v}' for '{key}'")))
        }
        let seed = {
            let (k, v, l) = get("seed").unwrap();
            num(k, v, *l)?
        };
        let mut cfg = Self::with_seed(seed);
        let mut skip_k = 10usize;
        for (k, v, l) in &seen {
            let l = *l;
            match k.as_str() {
                "T" => cfg.steps = num(k, v, l)?,
                "beta_start" => cfg.beta_start = num(k, v, l)?,
                "beta_end" => cfg.beta_end = num(k, v, l)?,
                "t" => cfg.t = num(k, v, l)?,
                "L" => cfg.loops = num(k, v, l)?,
                "use_tucker" => cfg.use_tucker = num(k, v, l)?,
                "skip_k" => skip_k = num(k, v, l)?,
                "patch" => cfg.patch = num(k, v, l)?,
                "trials" => cfg.trials = num(k, v, l)?,
                "eta" => cfg.rank_policy = RankPolicy::Energy(num(k, v, l)?),
                "ranks" => {
                    let r = v
                        .split(',')
                        .map(|s| num(k, s.trim(), l))
                        .collect::<Result<Vec<usize>>>()?;
                    ensure!(r.len() == TUCKER_MODES, Config, "line {l}: ranks needs {TUCKER_MODES} entries");
                    cfg.rank_policy = RankPolicy::Explicit(r);
                }
                "clamp" => {
                    let (a, b) = v
                        .split_once(',')
                        .ok_or_else(|| LoridError::Config(format!("line {l}: clamp needs lo,hi")))?;
                    cfg.clamp = Some((num(k, a.trim(), l)?, num(k, b.trim(), l)?));
                }
                "loop_order" => {
                    cfg.order = match v.as_str() {
                        "diffuse_first" => LoopOrder::DiffuseThenDenoise,
                        "denoise_first" => LoopOrder::DenoiseThenDiffuse,
                        _ => return Err(LoridError::Config(format!("line {l}: unknown loop_order '{v}'"))),
                    }
                }
                _ => {}
            }
        }
        ensure!(
            !(get("eta").is_some() && get("ranks").is_some()),
            Config,
            "eta and ranks are mutually exclusive"
        );
        if let Some((_, v, l)) = get("sampler") {
            cfg.sampler = match v.as_str() {
                "ancestral" => Sampler::Ancestral,
                "skip" => Sampler::Skip(skip_k),
                _ => return Err(LoridError::Config(format!("line {l}: unknown sampler '{v}'"))),
            };
        } else {
            ensure!(get("skip_k").is_none(), Config, "skip_k given without sampler = skip");
        }
        if let RankPolicy::Energy(eta) = cfg.rank_policy {
            ensure!(eta > 0.0 && eta <= 1.0, Config, "eta must lie in (0, 1]");
        }
        ensure!(cfg.trials >= 1, Config, "trials must be >= 1");
        cfg.schedule()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        crate::diffusion::make_linear_schedule(self.steps, self.beta_start, self.beta_end)
            .map_err(|e| LoridError::Config(e.to_string()))
    }

    /// Purification settings; `basis` is attached when `use_tucker` is set.
    pub fn lorid_config(&self, basis: Option<TuckerBasis>) -> Result<LoridConfig> {
        let mut c = LoridConfig::new(self.t, self.loops);
        c.sampler = self.sampler;
        c.order = self.order;
        c.clamp = self.clamp;
        c.seed = self.seed;
        if self.use_tucker {
            let b = basis.ok_or_else(|| LoridError::Config("use_tucker = true needs a basis".into()))?;
            c = c.with_basis(b);
        }
        c.validate(&self.schedule()?)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_tensor, seeded};

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let mut x = gaussian_tensor(&[3, 5, 7], &mut seeded(1));
        x.data_mut()[0] = -0.0;
        x.data_mut()[1] = f64::MIN_POSITIVE / 2.0;
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 3 * 8 + 8 * 105);
        assert_eq!(&buf[..4], b"LTEN");
        assert_eq!(&buf[4..8], &[1, 0, 3, 0]);
        let y = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(x.shape(), y.shape());
        assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(LoridError::Format(_))));
        let mut newer = buf.clone();
        newer[4] = 2;
        let err = read_tensor(&mut newer.as_slice()).unwrap_err().to_string();
        assert!(err.contains("newer"), "{err}");
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_tensor(&mut &short[..]), Err(LoridError::Format(_))));
        let mut huge = Vec::new();
        huge.extend_from_slice(b"LTEN");
        huge.extend_from_slice(&1u16.to_le_bytes());
        huge.extend_from_slice(&2u16.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(read_tensor(&mut huge.as_slice()), Err(LoridError::Format(_))));
    }

    #[test]
    fn config_parsing() {
        let c = RunConfig::parse("seed = 3\nt=200 # comment\nL = 4\nsampler = skip\nskip_k = 5\nuse_tucker = true\n").unwrap();
        assert_eq!((c.t, c.loops, c.seed), (200, 4, 3));
        assert_eq!(c.sampler, Sampler::Skip(5));
        assert!(c.use_tucker);
        assert!(RunConfig::parse("t = 10").is_err());
        assert!(RunConfig::parse("seed = 1\nbogus = 2").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed = 1\neta = 0.9\nranks = 1,1,1,1").is_err());
        assert!(RunConfig::parse("seed = 1\nranks = 1,2").is_err());
        assert!(RunConfig::parse("seed = 1\nT = 0").is_err());
        let r = RunConfig::parse("seed = 1\nranks = 2,2,3,1\nclamp = -1, 1").unwrap();
        assert_eq!(r.rank_policy, RankPolicy::Explicit(vec![2, 2, 3, 1]));
        assert_eq!(r.clamp, Some((-1.0, 1.0)));
    }

    #[test]
    fn csv_table_output() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(&[1.0, 0.5]);
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1,0.5\n");
        t.push(&[1.0]);
        assert!(t.write_to(Vec::new()).is_err());
    }
}
