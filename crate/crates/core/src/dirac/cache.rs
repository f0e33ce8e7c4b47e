//! CSV persistence for generated sample sets.
//!
//! ```text
//! # dim,count,b_max,quad_nodes,seed,max_iters,step_tol
//! # 2,5,10,128,20220417,400,1e-10
//! 1.2345678901234567e-1,-9.8765432109876543e-1
//! ...
//! ```
//!
//! Coordinates are written with 17 significant digits so a read-back is lossless.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{optimize_mixture, DiracError, DiracMixture, LcdConfig, Result};

const HEADER: &str = "# dim,count,b_max,quad_nodes,seed,max_iters,step_tol";

fn key_line(dim: usize, count: usize, cfg: &LcdConfig) -> String {
    format!(
        "# {dim},{count},{},{},{},{},{}",
        cfg.b_max, cfg.quad_nodes, cfg.seed, cfg.max_iters, cfg.step_tol
    )
}

fn io_err(path: &Path, source: std::io::Error) -> DiracError {
    DiracError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `mix` with its generating configuration. The file appears atomically.
pub fn write_mixture_csv(path: &Path, mix: &DiracMixture, cfg: &LcdConfig) -> Result<()> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&key_line(mix.dim(), mix.count(), cfg));
    out.push('\n');
    for p in mix.points() {
        let row: Vec<String> = p.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(out.as_bytes()).map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Reads a sample file, returning the mixture and the key line it was written with.
pub fn read_mixture_csv(path: &Path) -> Result<(DiracMixture, String)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let perr = |line: usize, msg: &str| DiracError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(perr(1, "missing header comment"));
    }
    let key = lines
        .next()
        .filter(|l| l.starts_with("# "))
        .ok_or_else(|| perr(2, "missing configuration line"))?
        .to_string();
    let fields: Vec<&str> = key[2..].split(',').collect();
    if fields.len() != 7 {
        return Err(perr(2, "configuration line needs 7 fields"));
    }
    let dim: usize = fields[0].parse().map_err(|_| perr(2, "bad dim"))?;
    let count: usize = fields[1].parse().map_err(|_| perr(2, "bad count"))?;
    let mut points = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| perr(idx + 3, "bad number"))?;
        if row.len() != dim {
            return Err(perr(idx + 3, "wrong number of coordinates"));
        }
        points.push(row);
    }
    if points.len() != count {
        return Err(perr(0, "point count does not match header"));
    }
    let mix = DiracMixture::from_points(dim, &points)?;
    Ok((mix, key))
}

/// Directory-backed cache of generated mixtures keyed by `(dim, count, cfg)`.
#[derive(Debug, Clone)]
pub struct SampleCache {
    dir: PathBuf,
}

impl SampleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, dim: usize, count: usize, cfg: &LcdConfig) -> PathBuf {
        self.dir.join(format!(
            "lcd_d{dim}_m{count}_b{}_q{}_s{}_i{}_t{:e}.csv",
            cfg.b_max, cfg.quad_nodes, cfg.seed, cfg.max_iters, cfg.step_tol
        ))
    }

    /// Returns the cached mixture when present and matching, otherwise generates
    /// and stores it. Unreadable or mismatched cache files are regenerated.
    pub fn load_or_generate(
        &self,
        dim: usize,
        count: usize,
        cfg: &LcdConfig,
    ) -> Result<DiracMixture> {
        let path = self.path_for(dim, count, cfg);
        if let Ok((mix, key)) = read_mixture_csv(&path) {
            if key == key_line(dim, count, cfg) && mix.dim() == dim && mix.count() == count {
                return Ok(mix);
            }
        }
        let mix = optimize_mixture(dim, count, cfg)?;
        write_mixture_csv(&path, &mix, cfg)?;
        Ok(mix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LcdConfig::default();
        let mix = DiracMixture::from_free_points(
            2,
            &[vec![0.1, 1.0 / 3.0], vec![-2.0f64.sqrt(), 1e-300]],
            true,
        )
        .unwrap();
        let path = dir.path().join("m.csv");
        write_mixture_csv(&path, &mix, &cfg).unwrap();
        let (back, key) = read_mixture_csv(&path).unwrap();
        assert_eq!(back.points(), mix.points());
        assert_eq!(key, key_line(2, 5, &cfg));
    }

    #[test]
    fn cache_reuses_files() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SampleCache::new(dir.path());
        let cfg = LcdConfig::default();
        let a = cache.load_or_generate(1, 4, &cfg).unwrap();
        assert!(cache.path_for(1, 4, &cfg).exists());
        let b = cache.load_or_generate(1, 4, &cfg).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn malformed_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(
            read_mixture_csv(&path),
            Err(DiracError::Parse { .. })
        ));
    }
}
