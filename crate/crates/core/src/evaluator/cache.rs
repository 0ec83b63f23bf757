//! Memoizing evaluator wrapper with an optional append-only cache file.
//!
//! Cache file records are tab-separated lines:
//! `<canonical config key>\t<error>\t<unix timestamp seconds>`. A final line
//! without a newline is an interrupted write and is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use super::{EvaluationResult, Evaluator};
use crate::design_space::{CandidateConfig, DesignSpace};
use crate::error::{Error, Result};

pub struct CachedEvaluator<E> {
    inner: E,
    entries: RwLock<HashMap<String, f64>>,
    file: Option<Mutex<BufWriter<File>>>,
    inner_calls: AtomicUsize,
}

fn parse_records(text: &str, path: &Path) -> Result<HashMap<String, f64>> {
    let mut map = HashMap::new();
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    for (n, line) in complete.lines().enumerate() {
        let bad = |reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: reason.to_owned(),
        };
        let mut fields = line.split('\t');
        let (Some(key), Some(error), Some(_ts), None) = (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected key, error and timestamp"));
        };
        let error: f64 = error.parse().map_err(|_| bad("unparseable error"))?;
        if !(0.0..=1.0).contains(&error) {
            return Err(bad("error outside [0, 1]"));
        }
        map.entry(key.to_owned()).or_insert(error);
    }
    Ok(map)
}

impl<E: Evaluator> CachedEvaluator<E> {
    /// In-memory cache only.
    pub fn new(inner: E) -> Self {
        CachedEvaluator {
            inner,
            entries: RwLock::new(HashMap::new()),
            file: None,
            inner_calls: AtomicUsize::new(0),
        }
    }

    /// Loads any records already in `path` and appends new ones to it.
    pub fn with_file(inner: E, path: &Path) -> Result<Self> {
        let mut text = String::new();
        if path.exists() {
            File::open(path)?.read_to_string(&mut text)?;
        }
        let entries = parse_records(&text, path)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            // Drop the interrupted record so the next one starts cleanly.
            OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CachedEvaluator {
            inner,
            entries: RwLock::new(entries),
            file: Some(Mutex::new(BufWriter::new(file))),
            inner_calls: AtomicUsize::new(0),
        })
    }

    /// Number of times the wrapped evaluator has been called.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().expect("cache lock").get(key).copied()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn record(&self, key: &str, error: f64) -> Result<f64> {
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(&existing) = entries.get(key) {
            return Ok(existing);
        }
        entries.insert(key.to_owned(), error);
        if let Some(file) = &self.file {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0);
            let mut f = file.lock().expect("cache file lock");
            writeln!(f, "{key}\t{error}\t{ts:.3}")?;
            f.flush()?;
        }
        Ok(error)
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
        let key = space.canonical_key(config);
        if let Some(error) = self.get(&key) {
            return Ok(EvaluationResult::new(error)?.with_meta("cached", true));
        }
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        let mut r = self.inner.evaluate(space, config)?;
        r.error = self.record(&key, r.error)?;
        Ok(r)
    }
}

/// Default cache file name inside a run directory.
pub fn default_cache_path(dir: &Path) -> PathBuf {
    dir.join("cache.tsv")
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;

    use super::*;
    use crate::evaluator::synthetic::SyntheticEvaluator;
    use crate::presets;

    #[derive(Default)]
    struct Counting(AtomicUsize);

    impl Evaluator for Counting {
        fn evaluate(&self, space: &DesignSpace, config: &CandidateConfig) -> Result<EvaluationResult> {
            self.0.fetch_add(1, Ordering::SeqCst);
            SyntheticEvaluator.evaluate(space, config)
        }
    }

    #[test]
    fn repeat_configs_hit_the_cache() {
        let space = presets::restricted_mnist();
        let configs: Vec<_> = space.enumerate().take(5).collect();
        let cached = CachedEvaluator::new(Counting::default());
        for c in configs.iter().chain(&configs) {
            let r = cached.evaluate(&space, c).unwrap();
            assert_eq!(r.error.to_bits(), SyntheticEvaluator.evaluate(&space, c).unwrap().error.to_bits());
        }
        assert_eq!(cached.inner().0.load(Ordering::SeqCst), 5);
        assert_eq!(cached.inner_calls(), 5);
        assert_eq!(cached.len(), 5);
    }

    #[test]
    fn persisted_cache_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = default_cache_path(dir.path());
        let space = presets::restricted_mnist();
        let configs: Vec<_> = space.enumerate().step_by(97).take(20).collect();
        let first: Vec<u64> = {
            let cached = CachedEvaluator::with_file(Counting::default(), &path).unwrap();
            configs.iter().map(|c| cached.evaluate(&space, c).unwrap().error.to_bits()).collect()
        };
        let cached = CachedEvaluator::with_file(Counting::default(), &path).unwrap();
        let second: Vec<u64> = configs.iter().map(|c| cached.evaluate(&space, c).unwrap().error.to_bits()).collect();
        assert_eq!(first, second);
        assert_eq!(cached.inner_calls(), 0);
        assert_eq!(cached.len(), 20);
    }

    #[test]
    fn interrupted_record_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "a=1\t0.25\t1.0\nb=2\t0.5").unwrap();
        let cached = CachedEvaluator::with_file(SyntheticEvaluator, &path).unwrap();
        assert_eq!(cached.get("a=1"), Some(0.25));
        assert_eq!(cached.get("b=2"), None);
        drop(cached);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a=1\t0.25\t1.0\n");
    }

    #[test]
    fn corrupt_record_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "a=1\t0.25\t1.0\nb=2\tnope\t1.0\n").unwrap();
        match CachedEvaluator::with_file(SyntheticEvaluator, &path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("corrupt cache accepted"),
        }
    }

    #[test]
    fn concurrent_workers_share_entries() {
        let space = presets::restricted_mnist();
        let configs: Vec<_> = space.enumerate().take(200).collect();
        let cached = CachedEvaluator::new(Counting::default());
        std::thread::scope(|s| {
            for chunk in configs.chunks(50) {
                let cached = &cached;
                let space = &space;
                s.spawn(move || {
                    for c in chunk {
                        cached.evaluate(space, c).unwrap();
                    }
                });
            }
        });
        assert_eq!(cached.len(), 200);
        assert_eq!(cached.inner_calls(), 200);
    }
}
