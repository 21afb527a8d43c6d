//! On-disk formats: dataset directories, the binary eigen cache, JSON
//! checkpoints, CSV dumps and run manifests.
//!
//! Every float written here uses 17 significant digits so values survive a
//! text round trip bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filterbank::{Bin, FilterBank, PartitionSpec};
use crate::graph::{Dataset, Graph};
use crate::linalg::Matrix;
use crate::model::{Dims, Head, ModelParams};
use crate::spectral::EigenSystem;

/// `x` with 17 significant digits, e.g. `1.0000000000000000e-1`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|_| Error::Malformed {
        file: path.display().to_string(),
        line: 0,
        msg: "not valid UTF-8".into(),
    })
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Malformed {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-blank lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    what: &str,
) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(path, line, format!("cannot parse {what} from {field:?}")))
}

#[derive(Debug, Serialize, Deserialize)]
struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Read `edges.tsv`, `features.tsv`, `labels.tsv` and `splits.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let fpath = dir.join("features.tsv");
    let epath = dir.join("edges.tsv");
    let lpath = dir.join("labels.tsv");
    let spath = dir.join("splits.json");
    for p in [&epath, &fpath, &lpath, &spath] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (ln, line) in lines(&read_text(&fpath)?) {
        let row: Vec<f64> = line
            .split('\t')
            .map(|f| parse_field(&fpath, ln, f, "a float"))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(malformed(
                    &fpath,
                    ln,
                    format!("expected {w} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(malformed(&fpath, ln, "non-finite feature value"));
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(malformed(&fpath, 0, "no feature rows"));
    }
    let features = Matrix::from_rows(&rows)?;

    let mut edges = Vec::new();
    for (ln, line) in lines(&read_text(&epath)?) {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(malformed(
                &epath,
                ln,
                format!("expected 2 columns, found {}", parts.len()),
            ));
        }
        let src: usize = parse_field(&epath, ln, parts[0], "a node index")?;
        let dst: usize = parse_field(&epath, ln, parts[1], "a node index")?;
        if src >= n || dst >= n {
            return Err(malformed(
                &epath,
                ln,
                Error::EdgeOutOfRange { src, dst, n }.to_string(),
            ));
        }
        edges.push((src, dst));
    }
    let graph = Graph::new(n, &edges)?;

    let mut labels: Vec<Option<usize>> = vec![None; n];
    for (ln, line) in lines(&read_text(&lpath)?) {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(malformed(
                &lpath,
                ln,
                format!("expected 2 columns, found {}", parts.len()),
            ));
        }
        let node: usize = parse_field(&lpath, ln, parts[0], "a node index")?;
        let label: usize = parse_field(&lpath, ln, parts[1], "a label")?;
        if node >= n {
            return Err(malformed(
                &lpath,
                ln,
                format!("node {node} out of range for n = {n}"),
            ));
        }
        if labels[node].replace(label).is_some() {
            return Err(malformed(&lpath, ln, format!("node {node} labelled twice")));
        }
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Label(format!("node {i} has no label"))))
        .collect::<Result<_>>()?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);

    let splits: Splits = serde_json::from_str(&read_text(&spath)?)
        .map_err(|e| malformed(&spath, e.line(), e.to_string()))?;
    let ds = Dataset {
        graph,
        features,
        labels,
        num_classes,
        train: splits.train,
        val: splits.val,
        test: splits.test,
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset directory readable by [`load_dataset`].
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for (u, v) in ds.graph.undirected_edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    let mut feats = String::new();
    for i in 0..ds.features.rows() {
        let row: Vec<String> = ds.features.row(i).iter().map(|&x| fmt_f64(x)).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    let mut labels = String::new();
    for (i, l) in ds.labels.iter().enumerate() {
        labels.push_str(&format!("{i}\t{l}\n"));
    }
    let splits = Splits {
        train: ds.train.clone(),
        val: ds.val.clone(),
        test: ds.test.clone(),
    };
    let files = [
        ("edges.tsv", edges),
        ("features.tsv", feats),
        ("labels.tsv", labels),
        ("splits.json", serde_json::to_string(&splits)? + "\n"),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

pub const EIGEN_MAGIC: &[u8; 16] = b"SPECFILT-EIG\0\0\0\0";

/// Parameters that determine a cached eigensystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenKey {
    pub k_low: usize,
    pub k_high: usize,
    pub tol: f64,
    pub seed: u64,
}

impl EigenKey {
    /// Digest of the raw `edges.tsv` bytes plus the solver parameters.
    pub fn digest(&self, edges_bytes: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(edges_bytes);
        h.update((self.k_low as u64).to_le_bytes());
        h.update((self.k_high as u64).to_le_bytes());
        h.update(self.tol.to_bits().to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.finalize().into()
    }
}

/// Cache layout: magic, `n`, `k_low`, `k_high` (u64 LE), eigenvalues,
/// eigenvectors column by column (f64 LE), then a 32-byte key digest.
pub fn write_eigen_cache(path: &Path, es: &EigenSystem, digest: &[u8; 32]) -> Result<()> {
    let n = es.source_n();
    let mut buf = Vec::with_capacity(16 + 24 + 8 * es.len() * (n + 1) + 32);
    buf.extend_from_slice(EIGEN_MAGIC);
    for c in [n, es.bottom_count(), es.top_count()] {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &v in es.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let u = es.vectors();
    for j in 0..es.len() {
        for i in 0..n {
            buf.extend_from_slice(&u[(i, j)].to_le_bytes());
        }
    }
    buf.extend_from_slice(digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Parse a cache file, returning the system and its stored key digest.
pub fn read_eigen_cache(path: &Path) -> Result<(EigenSystem, [u8; 32])> {
    let buf = read_file(path)?;
    let bad = |msg: &str| Error::Cache(format!("{}: {msg}", path.display()));
    if buf.len() < 16 + 24 + 32 || &buf[..16] != EIGEN_MAGIC {
        return Err(bad("missing magic header"));
    }
    let word =
        |i: usize| u64::from_le_bytes(buf[16 + 8 * i..24 + 8 * i].try_into().unwrap()) as usize;
    let (n, k_low, k_high) = (word(0), word(1), word(2));
    let k = k_low
        .checked_add(k_high)
        .filter(|&k| k <= n)
        .ok_or_else(|| bad("band sizes exceed n"))?;
    let floats = k
        .checked_mul(n + 1)
        .ok_or_else(|| bad("header overflows"))?;
    if buf.len() != 40 + 8 * floats + 32 {
        return Err(bad("length does not match header"));
    }
    let f = |i: usize| f64::from_le_bytes(buf[40 + 8 * i..48 + 8 * i].try_into().unwrap());
    let values: Vec<f64> = (0..k).map(f).collect();
    let mut u = Matrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            u[(i, j)] = f(k + j * n + i);
        }
    }
    let digest: [u8; 32] = buf[buf.len() - 32..].try_into().unwrap();
    let es =
        EigenSystem::from_parts(values, u, k == n, n, k_low).map_err(|e| bad(&e.to_string()))?;
    Ok((es, digest))
}

/// JSON formatter that writes floats with 17 significant digits.
struct Fixed17<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> std::io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl<F: serde_json::ser::Formatter> serde_json::ser::Formatter for Fixed17<F> {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        w: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        if value.is_finite() {
            w.write_all(fmt_f64(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

/// Pretty JSON with 17-digit floats and a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut out,
        Fixed17(serde_json::ser::PrettyFormatter::new()),
    );
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Single-line JSON with 17-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut out,
        Fixed17(serde_json::ser::CompactFormatter),
    );
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EtaTriple {
    low: f64,
    high: f64,
    gpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    dims: Dims,
    head: Head,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    partition: PartitionSpec,
    low_coeffs: Vec<Vec<f64>>,
    high_coeffs: Vec<Vec<f64>>,
    gpr_coeffs: Vec<f64>,
    etas: EtaTriple,
    seed: u64,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], shape: (usize, usize)) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(shape.0, shape.1));
    }
    let m = Matrix::from_rows(rows).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if m.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "matrix is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            shape.0,
            shape.1
        )));
    }
    Ok(m)
}

pub fn checkpoint_json(params: &ModelParams, seed: u64) -> Result<String> {
    let fb = &params.filter;
    let file = CheckpointFile {
        schema_version: 1,
        dims: params.dims,
        head: params.head,
        w1: matrix_rows(&params.w1),
        b1: params.b1.clone(),
        w2: matrix_rows(&params.w2),
        b2: params.b2.clone(),
        partition: fb.partition.clone(),
        low_coeffs: fb.low_coeffs.clone(),
        high_coeffs: fb.high_coeffs.clone(),
        gpr_coeffs: fb.gpr_coeffs.clone(),
        etas: EtaTriple {
            low: fb.eta_low,
            high: fb.eta_high,
            gpr: fb.eta_gpr,
        },
        seed,
    };
    to_json_pretty(&file)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, seed: u64) -> Result<()> {
    fs::write(path, checkpoint_json(params, seed)?)?;
    Ok(())
}

/// Parse a checkpoint; returns the parameters and the recorded seed.
pub fn parse_checkpoint(text: &str) -> Result<(ModelParams, u64)> {
    let f: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if f.schema_version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported schema_version {}",
            f.schema_version
        )));
    }
    let (w1_shape, w2_shape) = match f.head {
        Head::Mlp => ((f.dims.d, f.dims.hidden), (f.dims.hidden, f.dims.c)),
        Head::Linear => ((f.dims.d, f.dims.c), (0, 0)),
    };
    let params = ModelParams {
        dims: f.dims,
        head: f.head,
        w1: rows_matrix(&f.w1, w1_shape)?,
        b1: f.b1,
        w2: rows_matrix(&f.w2, w2_shape)?,
        b2: f.b2,
        filter: FilterBank {
            partition: f.partition,
            low_coeffs: f.low_coeffs,
            high_coeffs: f.high_coeffs,
            gpr_coeffs: f.gpr_coeffs,
            eta_low: f.etas.low,
            eta_high: f.etas.high,
            eta_gpr: f.etas.gpr,
        },
    };
    check_partition(&params.filter.partition)?;
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((params, f.seed))
}

fn check_partition(p: &PartitionSpec) -> Result<()> {
    let ok = |bins: &[Bin]| {
        bins.iter().all(|b| b.start < b.end) && bins.windows(2).all(|w| w[0].end == w[1].start)
    };
    if ok(&p.low_bins) && ok(&p.high_bins) {
        Ok(())
    } else {
        Err(Error::Checkpoint(
            "partition bins are not contiguous".into(),
        ))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64)> {
    parse_checkpoint(&read_text(path)?)
}

/// `lambda,response` rows in ascending λ.
pub fn response_csv(values: &[f64], response: &[f64]) -> String {
    let mut out = String::from("lambda,response\n");
    for (l, r) in values.iter().zip(response) {
        out.push_str(&format!("{},{}\n", fmt_f64(*l), fmt_f64(*r)));
    }
    out
}

/// `j,mean_distance,mean_variance` rows.
pub fn oversmooth_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("j,mean_distance,mean_variance\n");
    for (j, d, v) in rows {
        out.push_str(&format!("{j},{},{}\n", fmt_f64(*d), fmt_f64(*v)));
    }
    out
}

/// Reproducibility record written next to each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// `<path>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let p = manifest_path(out);
    let mut f = fs::File::create(&p)?;
    f.write_all(to_json_pretty(manifest)?.as_bytes())?;
    Ok(p)
}
