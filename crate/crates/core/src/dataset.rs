//! Trajectories, time-lagged pair datasets, splitting, batching and simple
//! featurization.
//!
//! Binary trajectory layout (`VTRJ1`, all little-endian):
//!
//! | offset | size  | content                       |
//! |--------|-------|-------------------------------|
//! | 0      | 5     | magic `VTRJ1`                 |
//! | 5      | 4     | u32 frame count `T`           |
//! | 9      | 4     | u32 dimension `d`             |
//! | 13     | 8     | f64 time per frame            |
//! | 21     | 8·T·d | f64 values, row-major         |
//!
//! The CSV form is one frame per line with comma-separated values; lines
//! starting with `#` are skipped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 5] = b"VTRJ1";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One configuration per row.
    pub frames: DMatrix<f64>,
    pub dt_per_frame: f64,
    pub label: String,
}

impl Trajectory {
    pub fn new(frames: DMatrix<f64>, dt_per_frame: f64, label: impl Into<String>) -> Result<Self> {
        if frames.nrows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs at least 2 frames, got {}",
                frames.nrows()
            )));
        }
        if let Some(pos) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at frame {}",
                pos % frames.nrows()
            )));
        }
        Ok(Trajectory {
            frames,
            dt_per_frame,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Binary,
    Csv,
}

impl TrajectoryFormat {
    /// `.csv` maps to CSV, everything else to the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TrajectoryFormat::Csv,
            _ => TrajectoryFormat::Binary,
        }
    }
}

pub fn write_trajectory(traj: &Trajectory, path: &Path, format: TrajectoryFormat) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        TrajectoryFormat::Binary => {
            let to_u32 = |n: usize| {
                u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{n} exceeds u32")))
            };
            w.write_all(TRAJECTORY_MAGIC)?;
            w.write_all(&to_u32(traj.len())?.to_le_bytes())?;
            w.write_all(&to_u32(traj.dim())?.to_le_bytes())?;
            w.write_all(&traj.dt_per_frame.to_le_bytes())?;
            for row in traj.frames.row_iter() {
                for v in row.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        TrajectoryFormat::Csv => {
            writeln!(w, "# {}", traj.label.replace('\n', " "))?;
            writeln!(w, "# dt_per_frame={:?}", traj.dt_per_frame)?;
            for row in traj.frames.row_iter() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Trajectory> {
    let bytes = fs::read(path)?;
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trajectory")
        .to_string();
    match format {
        TrajectoryFormat::Binary => decode_binary(&bytes, label),
        TrajectoryFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::parse(format!("byte {}", e.utf8_error().valid_up_to()), "invalid UTF-8"))?;
            parse_csv(&text, label)
        }
    }
}

fn decode_binary(bytes: &[u8], label: String) -> Result<Trajectory> {
    const HEADER: usize = 21;
    if bytes.len() < HEADER {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            "truncated header",
        ));
    }
    if &bytes[..5] != TRAJECTORY_MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected VTRJ1"));
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::parse("offset 5", "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            format!("offset {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {t}x{d} frames, found {}", bytes.len()),
        ));
    }
    if t < 2 || d == 0 {
        return Err(Error::parse("offset 5", format!("degenerate shape {t}x{d}")));
    }
    let mut frames = DMatrix::zeros(t, d);
    for (k, chunk) in bytes[HEADER..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse(
                format!("offset {}", HEADER + 8 * k),
                "non-finite value",
            ));
        }
        frames[(k / d, k % d)] = v;
    }
    Trajectory::new(frames, dt, label)
}

fn parse_csv(text: &str, label: String) -> Result<Trajectory> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dt = 1.0;
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("dt_per_frame=") {
                dt = v.trim().parse().map_err(|_| {
                    Error::parse(format!("line {}", lineno + 1), "bad dt_per_frame")
                })?;
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(format!("line {}", lineno + 1), format!("bad number {field:?}"))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::parse(format!("line {}", lineno + 1), "non-finite value"))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::parse(
                    format!("line {}", lineno + 1),
                    format!("row has {} columns, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let d = width.ok_or_else(|| Error::parse("line 1", "no data rows"))?;
    if rows.len() < 2 {
        return Err(Error::parse(
            format!("line {}", text.lines().count()),
            "trajectory needs at least 2 frames",
        ));
    }
    let frames = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    Trajectory::new(frames, dt, label)
}

/// A time-lagged pair `(x_t, x_{t+lag})` within one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub traj: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDataset {
    pub pairs: Vec<PairIndex>,
    pub lag: usize,
}

impl LaggedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stacks the selected pairs into `(X, Y)` with one pair per row.
    pub fn gather(
        &self,
        trajs: &[Trajectory],
        indices: &[usize],
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = trajs[0].dim();
        let mut x = DMatrix::zeros(indices.len(), d);
        let mut y = DMatrix::zeros(indices.len(), d);
        for (row, &i) in indices.iter().enumerate() {
            let p = self.pairs[i];
            let f = &trajs[p.traj].frames;
            x.row_mut(row).copy_from(&f.row(p.t));
            y.row_mut(row).copy_from(&f.row(p.t + self.lag));
        }
        (x, y)
    }

    pub fn gather_all(&self, trajs: &[Trajectory]) -> (DMatrix<f64>, DMatrix<f64>) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(trajs, &all)
    }
}

/// All pairs `(t, t + tau)` that stay inside a single trajectory.
pub fn lagged_pairs(trajs: &[Trajectory], tau: usize) -> Result<LaggedDataset> {
    if tau == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    if let Some(first) = trajs.first() {
        if trajs.iter().any(|t| t.dim() != first.dim()) {
            return Err(Error::Dimension("trajectories differ in dimension".into()));
        }
    }
    let pairs: Vec<PairIndex> = trajs
        .iter()
        .enumerate()
        .flat_map(|(traj, tr)| (0..tr.len().saturating_sub(tau)).map(move |t| PairIndex { traj, t }))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "lag {tau} is not shorter than any trajectory"
        )));
    }
    Ok(LaggedDataset { pairs, lag: tau })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    /// Sorted pair indices.
    pub train: Vec<usize>,
    /// Sorted pair indices.
    pub validation: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

/// Random pair-level split; `fraction` is the validation share.
pub fn split(ds: &LaggedDataset, fraction: f64, seed: u64) -> Result<SplitIndices> {
    split_count(ds.len(), fraction, seed)
}

pub fn split_count(n: usize, fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::EmptyDataset(format!(
            "fraction {fraction} of {n} pairs leaves an empty train or validation set"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut validation = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        seed,
        fraction,
    })
}

/// Shuffles `indices` and cuts them into batches; the last batch may be short.
pub fn shuffled_batches(indices: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

/// Contact map entries `exp(-d)`.
pub fn contact_transform(distances: &[f64]) -> Result<Vec<f64>> {
    distances
        .iter()
        .map(|&d| {
            if d >= 0.0 {
                Ok((-d).exp())
            } else {
                Err(Error::InvalidArgument(format!("negative distance {d}")))
            }
        })
        .collect()
}

/// Column means and the centered copy of `x`.
pub fn remove_mean(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    (mean, centered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn traj(len: usize, d: usize) -> Trajectory {
        Trajectory::new(
            DMatrix::from_fn(len, d, |r, c| (r * d + c) as f64),
            1.0,
            "t",
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = DMatrix::from_fn(100, 5, |_, _| rng.random::<f64>() * 1e3 - 5e2);
        let t = Trajectory::new(frames, 0.01, "x").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.vtrj");
        write_trajectory(&t, &p, TrajectoryFormat::Binary).unwrap();
        let back = read_trajectory(&p, TrajectoryFormat::Binary).unwrap();
        assert!(t
            .frames
            .iter()
            .zip(back.frames.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.dt_per_frame.to_bits(), 0.01f64.to_bits());
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..5], b"VTRJ1");
        assert_eq!(bytes.len(), 21 + 100 * 5 * 8);
    }

    #[test]
    fn csv_round_trip_and_comments() {
        let t = traj(4, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_trajectory(&t, &p, TrajectoryFormat::Csv).unwrap();
        let back = read_trajectory(&p, TrajectoryFormat::Csv).unwrap();
        assert_eq!(back.frames, t.frames);
    }

    #[test]
    fn ragged_csv_names_row() {
        let err = parse_csv("1.0,2.0,3.0\n1.0,2.0\n", "x".into()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 2"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn empty_and_bad_inputs_error() {
        assert!(parse_csv("", "x".into()).is_err());
        assert!(parse_csv("# only comment\n", "x".into()).is_err());
        assert!(parse_csv("1.0\nnan\n", "x".into()).is_err());
        assert!(decode_binary(&[], "x".into()).is_err());
        assert!(decode_binary(b"VTRJ2aaaaaaaaaaaaaaaaaaaaaa", "x".into()).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.vtrj");
        fs::write(&p, b"").unwrap();
        assert!(read_trajectory(&p, TrajectoryFormat::Binary).is_err());
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VTRJ1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(
            decode_binary(&bytes, "x".into()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn pair_counting() {
        let ds = lagged_pairs(&[traj(5, 1)], 2).unwrap();
        assert_eq!(ds.len(), 3);

        let trajs = [traj(5, 1), traj(4, 1)];
        let ds = lagged_pairs(&trajs, 3).unwrap();
        assert_eq!(ds.len(), 3);
        for p in &ds.pairs {
            assert!(p.t + 3 < trajs[p.traj].len());
        }
        assert!(matches!(
            lagged_pairs(&[traj(5, 1)], 5),
            Err(Error::EmptyDataset(_))
        ));
        assert!(lagged_pairs(&[traj(5, 1)], 0).is_err());
    }

    #[test]
    fn gather_pairs_rows() {
        let ds = lagged_pairs(&[traj(5, 2)], 2).unwrap();
        let (x, y) = ds.gather(&[traj(5, 2)], &[1]);
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0]);
        assert_eq!(y.row(0).iter().copied().collect::<Vec<_>>(), vec![6.0, 7.0]);
    }

    #[test]
    fn split_sizes() {
        let s = split_count(100, 0.1, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (90, 10));
        assert_eq!(s, split_count(100, 0.1, 3).unwrap());
        let s9 = split_count(100, 0.9, 3).unwrap();
        assert_eq!((s9.train.len(), s9.validation.len()), (10, 90));
        assert!(split_count(100, 0.001, 3).is_err());
        assert!(split_count(100, 1.0, 3).is_err());
        assert!(split_count(100, 0.0, 3).is_err());
    }

    #[test]
    fn split_depends_only_on_pair_order() {
        let a = lagged_pairs(&[traj(30, 1), traj(20, 1)], 1).unwrap();
        let b = lagged_pairs(&[traj(30, 2), traj(20, 2)], 1).unwrap();
        assert_eq!(split(&a, 0.2, 5).unwrap(), split(&b, 0.2, 5).unwrap());
    }

    #[test]
    fn contact_values() {
        let c = contact_transform(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(c[0], 1.0);
        assert!((c[1] - 0.367879).abs() < 1e-6);
        assert!(c[1] > c[2]);
        assert!(contact_transform(&[-0.1]).is_err());
    }

    #[test]
    fn remove_mean_cases() {
        let (m, c) = remove_mean(&DMatrix::from_column_slice(2, 1, &[0.0, 2.0]));
        assert_eq!(m[0], 1.0);
        assert_eq!(c.as_slice(), &[-1.0, 1.0]);
        let (_, again) = remove_mean(&c);
        assert!((again - &c).abs().max() < 1e-12);
        let (_, single) = remove_mean(&DMatrix::from_row_slice(1, 3, &[1.0, 5.0, -2.0]));
        assert!(single.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn prop_batches_partition(n in 1usize..500, bs in 1usize..64, seed in any::<u64>()) {
            let idx: Vec<usize> = (0..n).map(|i| i * 3).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = shuffled_batches(&idx, bs, &mut rng);
            let mut flat: Vec<usize> = batches.iter().flatten().copied().collect();
            prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
            flat.sort_unstable();
            prop_assert_eq!(flat, idx);
        }

        #[test]
        fn prop_split_partitions(n in 2usize..400, frac in 0.05f64..0.95, seed in any::<u64>()) {
            if let Ok(s) = split_count(n, frac, seed) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(s.validation.len(), (frac * n as f64).round() as usize);
            }
        }

        #[test]
        fn prop_remove_mean_zero_columns(rows in 1usize..40, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-10.0..10.0));
            let (_, c) = remove_mean(&x);
            for col in c.column_iter() {
                prop_assert!(col.mean().abs() < 1e-12);
            }
        }
    }
}
