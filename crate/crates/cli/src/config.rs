//! Run configuration: flat key-value config files with `[section]` headers,
//! overridable from the command line. Defaults reproduce the reference
//! parameter set plus the documented optimizer defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cka_core::{OptimizerConfig, ProtocolKind, QberConvention, SystemParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemParams,
    pub optimizer: OptimizerConfig,
    pub sweep_grid: Vec<f64>,
    pub protocol: ProtocolKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemParams::default(),
            optimizer: OptimizerConfig::default(),
            sweep_grid: (0..=70).map(|i| i as f64 * 10.0).collect(),
            protocol: ProtocolKind::Practical,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue; // section headers are organizational only: keys are unique
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not `key = value`: {raw:?}", lineno + 1);
            };
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` setting (config file line or --override flag).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .with_context(|| format!("{key}: expected a number, got {value:?}"))
        };
        let int = || -> Result<u64> {
            value
                .parse::<u64>()
                .with_context(|| format!("{key}: expected an integer, got {value:?}"))
        };
        let s = self.system;
        match key {
            "eta_d" => self.system = sys(num()?, s.p_d, s.e_d_x, s.alpha, s.f, s.delta)?,
            "p_d" => self.system = sys(s.eta_d, num()?, s.e_d_x, s.alpha, s.f, s.delta)?,
            "e_d_x" => self.system = sys(s.eta_d, s.p_d, num()?, s.alpha, s.f, s.delta)?,
            "alpha" => self.system = sys(s.eta_d, s.p_d, s.e_d_x, num()?, s.f, s.delta)?,
            "f" => self.system = sys(s.eta_d, s.p_d, s.e_d_x, s.alpha, num()?, s.delta)?,
            "delta" => self.system = sys(s.eta_d, s.p_d, s.e_d_x, s.alpha, s.f, num()?)?,
            "population" => self.optimizer.population_size = int()? as usize,
            "generations" => self.optimizer.generations = int()? as usize,
            "restarts" => self.optimizer.restarts = int()? as usize,
            "seed" => self.optimizer.seed = int()?,
            "tolerance" => self.optimizer.tolerance = num()?,
            "qber" => {
                self.optimizer.qber =
                    QberConvention::parse(value).map_err(|e| anyhow::anyhow!("{e}"))?;
            }
            "protocol" => {
                self.protocol = match value {
                    "practical" => ProtocolKind::Practical,
                    "single_photon" | "single-photon" => ProtocolKind::SinglePhoton,
                    _ => bail!("protocol: expected practical|single_photon, got {value:?}"),
                }
            }
            "distances" => self.sweep_grid = parse_grid(value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let s = &self.system;
        let o = &self.optimizer;
        let mut out = String::new();
        let _ = writeln!(out, "[system]");
        let _ = writeln!(out, "eta_d = {}", s.eta_d);
        let _ = writeln!(out, "p_d = {}", s.p_d);
        let _ = writeln!(out, "e_d_x = {}", s.e_d_x);
        let _ = writeln!(out, "alpha = {}", s.alpha);
        let _ = writeln!(out, "f = {}", s.f);
        let _ = writeln!(out, "delta = {}", s.delta);
        let _ = writeln!(out, "[optimizer]");
        let _ = writeln!(out, "population = {}", o.population_size);
        let _ = writeln!(out, "generations = {}", o.generations);
        let _ = writeln!(out, "restarts = {}", o.restarts);
        let _ = writeln!(out, "seed = {}", o.seed);
        let _ = writeln!(out, "tolerance = {}", o.tolerance);
        out
    }
}

fn sys(eta_d: f64, p_d: f64, e_d_x: f64, alpha: f64, f: f64, delta: f64) -> Result<SystemParams> {
    SystemParams::new(eta_d, p_d, e_d_x, alpha, f, delta).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Distance grids: either `a:b:step` or a comma list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("grid spec must be start:end:step, got {spec:?}");
        }
        let (start, end, step): (f64, f64, f64) =
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
        if step <= 0.0 || end < start {
            bail!("grid spec must satisfy start <= end, step > 0");
        }
        let n = ((end - start) / step).round() as usize;
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(Into::into))
            .collect::<Result<_>>()?
    };
    if grid.is_empty() {
        bail!("distance grid is empty");
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_parameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.system, SystemParams::default());
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(cfg.sweep_grid.len(), 71);
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("0:30:10").unwrap(), vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(parse_grid("5, 7").unwrap(), vec![5.0, 7.0]);
        assert!(parse_grid("10:0:5").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        cfg.apply("e_d_x", "0.18").unwrap();
        assert_eq!(cfg.system.e_d_x, 0.18);
        cfg.apply("seed", "9").unwrap();
        assert_eq!(cfg.optimizer.seed, 9);
        assert!(cfg.apply("e_d_x", "0.7").is_err());
        assert!(cfg.apply("bogus", "1").is_err());
    }

    #[test]
    fn file_round_trip() {
        let cfg = RunConfig::default();
        let dir = std::env::temp_dir().join("cka-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, cfg.to_text()).unwrap();
        let loaded = RunConfig::from_file(&path).unwrap();
        assert_eq!(loaded.system, cfg.system);
        assert_eq!(loaded.optimizer, cfg.optimizer);
    }
}
