//! Run directories: tracked outputs, resolved config and manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diffeo_core::grid_image::io::{save_image, ImageFormat};
use diffeo_core::ScalarImage;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub struct RunDir {
    root: PathBuf,
    command: String,
    outputs: Vec<String>,
    extra: serde_json::Map<String, Value>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            outputs: Vec::new(),
            extra: serde_json::Map::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path for a new output, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.output(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Writes `stem.rawf`, plus `stem.pgm` for 2-D images.
    pub fn write_image(&mut self, stem: &str, img: &ScalarImage) -> Result<()> {
        save_image(img, &self.output(&format!("{stem}.rawf")), ImageFormat::Rawf)?;
        if img.ndim() == 2 {
            save_image(img, &self.output(&format!("{stem}.pgm")), ImageFormat::Pgm)?;
        }
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: Value) {
        self.extra.insert(key.to_string(), value);
    }

    /// Writes the resolved config (if any) and the manifest listing every
    /// output.
    pub fn finish(mut self, config: Option<&RunConfig>) -> Result<()> {
        if let Some(cfg) = config {
            self.write_text("config.txt", &cfg.to_text())?;
        }
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": rayon::current_num_threads(),
            "outputs": self.outputs,
            "details": Value::Object(self.extra.clone()),
        });
        let p = self.path("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))
    }
}
