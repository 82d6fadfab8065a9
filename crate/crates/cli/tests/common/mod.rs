#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use periph_core::stimulus::Family;
use periph_core::{BitDepth, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(self.stdout.trim()).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }

    #[track_caller]
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout: {}\nstderr: {}", self.stdout, self.stderr);
        self
    }
}

pub fn periph<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_periph"))
        .args(args)
        .output()
        .expect("run periph");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn noise(side: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    ImageBuffer::from_fn(side, side, |_, _| rng.random_range(0.1..0.9))
}

/// `classes` x `images` entries, each with an original and `seeds` noise
/// files for every family in `families`.
pub fn write_set(root: &Path, classes: usize, images: usize, seeds: u32, families: &[Family], side: usize) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for c in 0..classes {
        for i in 0..images {
            let dir = root.join(format!("class{c}")).join(format!("img{i:02}"));
            std::fs::create_dir_all(&dir).unwrap();
            noise(side, &mut rng).save_png(dir.join("original.png"), BitDepth::Eight).unwrap();
            for f in families {
                for s in 0..seeds {
                    noise(side, &mut rng)
                        .save_png(dir.join(format!("{f}_seed{s}.png")), BitDepth::Eight)
                        .unwrap();
                }
            }
        }
    }
    root.to_path_buf()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

pub fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
