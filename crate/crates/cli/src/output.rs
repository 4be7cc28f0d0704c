//! CSV emission. Floats use Rust's shortest round-trip formatting, so equal
//! results give byte-identical files.

use std::path::{Path, PathBuf};

use crate::error::CliError;

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width must match the header");
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|c| quote(c)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

fn quote(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    /// Shortest round-trip digits; scientific outside `[1e-3, 1e9)`.
    fn cell(&self) -> String {
        let a = self.abs();
        if *self == 0.0 || !self.is_finite() || (1e-3..1e9).contains(&a) {
            self.to_string()
        } else {
            format!("{self:e}")
        }
    }
}

macro_rules! plain_cell {
    ($($t:ty),*) => {$(
        impl Cell for $t {
            fn cell(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_cell!(usize, u32, u64, bool, str, String);

impl<T: Cell + ?Sized> Cell for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

pub fn cell(x: impl Cell) -> String {
    x.cell()
}

/// Output directory; every file written is echoed on stdout.
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        println!("{}", path.display());
        Ok(())
    }

    pub fn table(&self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, &table.render())
    }
}
