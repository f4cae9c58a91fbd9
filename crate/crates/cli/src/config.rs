//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use diffeo_core::optimizer::OptimizerConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerConfig,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub emit_grids: bool,
    pub emit_heatmaps: bool,
    pub emit_quiver: bool,
    pub emit_trace: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            source: None,
            target: None,
            image_dir: None,
            output_dir: None,
            emit_grids: true,
            emit_heatmaps: true,
            emit_quiver: true,
            emit_trace: true,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("bad value {value:?} for {key}: expected true or false"),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.optimizer;
        match key {
            "sigma_g" => o.sigma_g = parse(key, value)?,
            "h0" => o.h0 = parse(key, value)?,
            "sigma_eps" => o.sigma_eps = parse(key, value)?,
            "conv_threshold" => o.conv_threshold = parse(key, value)?,
            "min_iters_per_scale" => o.min_iters_per_scale = parse(key, value)?,
            "s0" => {
                o.s0 = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "max_iters" => o.max_iters = parse(key, value)?,
            "steps" => o.steps = parse(key, value)?,
            "freeze_template" => o.freeze_template = parse_bool(key, value)?,
            "refine_threshold" => o.refine_threshold = parse(key, value)?,
            "max_halvings" => o.max_halvings = parse(key, value)?,
            "step_growth" => o.step_growth = parse(key, value)?,
            "bypass_wavelets" => o.bypass_wavelets = parse_bool(key, value)?,
            "source" => self.source = path(value),
            "target" => self.target = path(value),
            "image_dir" => self.image_dir = path(value),
            "output_dir" => self.output_dir = path(value),
            "emit_grids" => self.emit_grids = parse_bool(key, value)?,
            "emit_heatmaps" => self.emit_heatmaps = parse_bool(key, value)?,
            "emit_quiver" => self.emit_quiver = parse_bool(key, value)?,
            "emit_trace" => self.emit_trace = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {raw:?}", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("override {kv:?} is not key=value"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            let text = std::fs::read_to_string(f).with_context(|| format!("reading config {}", f.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in config {}", f.display()))?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        cfg.optimizer.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value, parseable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("sigma_g", o.sigma_g.to_string());
        put("h0", o.h0.to_string());
        put("sigma_eps", o.sigma_eps.to_string());
        put("conv_threshold", o.conv_threshold.to_string());
        put("min_iters_per_scale", o.min_iters_per_scale.to_string());
        put("s0", o.s0.map_or("auto".into(), |v| v.to_string()));
        put("max_iters", o.max_iters.to_string());
        put("steps", o.steps.to_string());
        put("freeze_template", o.freeze_template.to_string());
        put("refine_threshold", o.refine_threshold.to_string());
        put("max_halvings", o.max_halvings.to_string());
        put("step_growth", o.step_growth.to_string());
        put("bypass_wavelets", o.bypass_wavelets.to_string());
        put("source", show(&self.source));
        put("target", show(&self.target));
        put("image_dir", show(&self.image_dir));
        put("output_dir", show(&self.output_dir));
        put("emit_grids", self.emit_grids.to_string());
        put("emit_heatmaps", self.emit_heatmaps.to_string());
        put("emit_quiver", self.emit_quiver.to_string());
        put("emit_trace", self.emit_trace.to_string());
        put("seed", self.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# header\nsigma_g = 3   # kernel\n\ns0 = 2\nemit_grids=false\n")
            .unwrap();
        assert_eq!(c.optimizer.sigma_g, 3.0);
        assert_eq!(c.optimizer.s0, Some(2));
        assert!(!c.emit_grids);
        c.apply_override("s0=auto").unwrap();
        assert_eq!(c.optimizer.s0, None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("sigma = 2").is_err());
        assert!(c.apply_text("sigma_g 2").is_err());
        assert!(c.apply_override("max_iters=-3").is_err());
        assert!(c.apply_override("emit_trace=maybe").is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("sigma_g = 1.7\nh0 = 0.05\nsource = a b.rawf\nseed = 9").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
