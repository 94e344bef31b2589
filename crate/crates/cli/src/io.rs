//! Run artifacts: diagnostics CSV, run manifest, graymap images.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use efp_core::duality::{DiagnosticsRow, DiagnosticsSink};
use efp_core::Ensemble;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DIAGNOSTICS_COLUMNS: [&str; 8] =
    ["iter", "primal", "dual", "gap", "kl_est", "f0", "logZ_stderr", "wall_ms"];

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Streams diagnostics rows to `diagnostics.csv`, flushing after each row.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<File>,
    start: Instant,
    pub rows: Vec<DiagnosticsRow>,
    error: Option<CliError>,
}

impl CsvSink {
    pub fn create(path: &Path) -> CliResult<Self> {
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        writer.write_record(DIAGNOSTICS_COLUMNS).map_err(csv_err)?;
        writer.flush().map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            start: Instant::now(),
            rows: Vec::new(),
            error: None,
        })
    }

    fn write(&mut self, row: &DiagnosticsRow) -> CliResult<()> {
        let fields = [
            row.iter.to_string(),
            row.primal.to_string(),
            row.dual.to_string(),
            row.gap.to_string(),
            row.kl_est.to_string(),
            row.f0.to_string(),
            row.log_z_stderr.to_string(),
            format!("{:.3}", row.wall_ms),
        ];
        self.writer.write_record(&fields).map_err(|source| CliError::Csv {
            path: self.path.clone(),
            source,
        })?;
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }

    /// First write error, if any; the sink interface itself cannot fail.
    pub fn finish(self) -> CliResult<Vec<DiagnosticsRow>> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.rows),
        }
    }
}

impl DiagnosticsSink for CsvSink {
    fn record(&mut self, row: &DiagnosticsRow) {
        self.rows.push(*row);
        if self.error.is_none() {
            if let Err(e) = self.write(row) {
                self.error = Some(e);
            }
        }
    }

    fn observe(&mut self, _iter: usize, _averages: &[f64], _gibbs: &Ensemble) {}

    fn elapsed_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}

/// Reads `diagnostics.csv` back into rows (wall time kept, stderr columns
/// beyond the log-partition one are not stored and come back as 0).
pub fn read_diagnostics(path: &Path) -> CliResult<Vec<DiagnosticsRow>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(DIAGNOSTICS_COLUMNS) {
        return Err(CliError::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> CliResult<f64> {
            rec[i]
                .parse()
                .map_err(|_| CliError::Config(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        rows.push(DiagnosticsRow {
            iter: f(0)? as usize,
            primal: f(1)?,
            dual: f(2)?,
            gap: f(3)?,
            kl_est: f(4)?,
            f0: f(5)?,
            log_z_stderr: f(6)?,
            entropy_stderr: 0.0,
            wall_ms: f(7)?,
        });
    }
    Ok(rows)
}

/// Writes `meta.json` (resolved configuration, derived seeds, crate version)
/// and `config.txt`, which `--config` accepts to repeat the run.
pub fn write_manifest(cfg: &RunConfig, extra: serde_json::Value) -> CliResult<PathBuf> {
    let seeds = cfg.seeds();
    let manifest = serde_json::json!({
        "experiment": cfg.experiment.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "derived_seeds": {
            "data": seeds.data,
            "lmc": seeds.lmc,
            "init": seeds.init,
            "diagnostics": seeds.diagnostics,
        },
        "config": cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::String(v)))
            .collect::<serde_json::Map<_, _>>(),
        "outputs": extra,
    });
    let cfg_path = cfg.out_dir.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_file_text()).map_err(|e| CliError::io(&cfg_path, e))?;
    let path = cfg.out_dir.join("meta.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Writes a plain (`P2`) graymap with maxval 255; values are clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> CliResult<()> {
    assert_eq!(pixels.len(), width * height);
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = format!("P2\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        body.push_str(&line.join(" "));
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Reads a plain (`P2`) or binary (`P5`, 8-bit) graymap, scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> CliResult<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, String> {
    let mut pos = 0;
    let mut token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated graymap".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad number {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad header {width}x{height} maxval {maxval}"));
    }
    let count = width * height;
    let raw: Vec<usize> = match magic.as_str() {
        "P2" => (0..count).map(|_| token().and_then(num)).collect::<Result<_, _>>()?,
        "P5" => {
            if maxval > 255 {
                return Err("16-bit binary graymaps are not supported".into());
            }
            // exactly one whitespace byte separates header and raster
            let start = pos + 1;
            let data = bytes.get(start..start + count).ok_or("truncated raster")?;
            data.iter().map(|&b| b as usize).collect()
        }
        other => return Err(format!("not a graymap (magic {other:?})")),
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: raw.iter().map(|&v| v as f64 / maxval as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_graymap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let px = vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25];
        write_pgm(&path, 3, 2, &px).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2\n3 2\n255\n"));
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        let expect = [0.0, 128.0 / 255.0, 1.0, 1.0, 0.0, 64.0 / 255.0];
        for (a, b) in img.pixels.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_graymap_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 51, 102]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.pixels, vec![0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn malformed_graymaps() {
        assert!(parse_pgm(b"P6\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P2\n2 2\n255\n1 2 3").is_err());
        assert!(parse_pgm(b"P2\n1 1\n10\n11").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diagnostics.csv");
        let mut sink = CsvSink::create(&path).unwrap();
        let row = DiagnosticsRow {
            iter: 3,
            primal: 1.5,
            dual: 1.25,
            gap: 0.25,
            kl_est: 25.0,
            f0: 0.1,
            log_z_stderr: 1e-3,
            entropy_stderr: 0.0,
            wall_ms: 12.0,
        };
        sink.record(&row);
        assert_eq!(sink.finish().unwrap().len(), 1);
        let back = read_diagnostics(&path).unwrap();
        assert_eq!(back, vec![row]);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("iter,primal,dual,gap,kl_est,f0,logZ_stderr,wall_ms\n"));
    }
}
