use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// A failed command, tagged with its exit status.
#[derive(Debug)]
pub enum Failure {
    Io(anyhow::Error),
    Invalid(anyhow::Error),
    Degenerate(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Degenerate(_) => 4,
        }
    }

    pub fn invalid(msg: impl fmt::Display) -> Self {
        Failure::Invalid(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Io(e) | Failure::Invalid(e) | Failure::Degenerate(e)) = self;
        write!(f, "{e:#}")
    }
}

pub trait Tag<T> {
    fn io_at(self, path: &Path) -> Result<T, Failure>;
    fn invalid(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn io_at(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(e.into().context(path.display().to_string())))
    }

    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
}

pub fn read_to_string(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).io_at(path)
}

pub fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).io_at(path)
}

/// Output files collected in memory and written together once the command
/// has succeeded. Each file goes to `<name>.partial` first and is renamed
/// into place.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    /// Renders a file into memory.
    pub fn add<F>(&mut self, name: impl Into<String>, render: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf).map_err(Failure::Io)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, Failure> {
        fs::create_dir_all(&self.dir).io_at(&self.dir)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let target = self.dir.join(&name);
            let partial = self.dir.join(format!("{name}.partial"));
            let res = (|| -> std::io::Result<()> {
                let mut w = BufWriter::new(File::create(&partial)?);
                w.write_all(&bytes)?;
                w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                fs::rename(&partial, &target)
            })();
            if let Err(e) = res {
                let _ = fs::remove_file(&partial);
                return Err(e).io_at(&target);
            }
            written.push(target);
        }
        Ok(written)
    }
}
