use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use milt_core::data::dataset_name_from_path;
use milt_core::{build_miltree, Method, MilDataset, MilTree, SelectionConfig, Session};
use uuid::Uuid;

use crate::error::{ApiError, ApiResult};

type TreeKey = (String, Method);

/// Shared service state: datasets and default-setting trees are loaded
/// once and cached; sessions live until deleted.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: PathBuf,
    datasets: Mutex<HashMap<String, Arc<MilDataset>>>,
    trees: Mutex<HashMap<TreeKey, Arc<MilTree>>>,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
}

fn lock<T>(m: &Mutex<T>) -> ApiResult<MutexGuard<'_, T>> {
    m.lock().map_err(|_| ApiError::internal("state lock poisoned"))
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> io::Result<Self> {
        let data_dir = data_dir.into();
        if !data_dir.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("data directory {} does not exist", data_dir.display()),
            ));
        }
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir,
                datasets: Mutex::default(),
                trees: Mutex::default(),
                sessions: RwLock::default(),
            }),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    /// Dataset name to CSV path for every `*.csv` in the data directory.
    pub fn files(&self) -> ApiResult<BTreeMap<String, PathBuf>> {
        let entries = std::fs::read_dir(&self.inner.data_dir).map_err(|e| ApiError::from(milt_core::Error::Io(e)))?;
        let mut out = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| ApiError::from(milt_core::Error::Io(e)))?.path();
            if path.is_file() && path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
                out.entry(dataset_name_from_path(&path)).or_insert(path);
            }
        }
        Ok(out)
    }

    pub fn dataset(&self, name: &str) -> ApiResult<Arc<MilDataset>> {
        if let Some(ds) = lock(&self.inner.datasets)?.get(name) {
            return Ok(ds.clone());
        }
        let path = self.files()?.remove(name).ok_or_else(|| ApiError::unknown_dataset(name))?;
        let ds = Arc::new(MilDataset::load_csv(&path)?);
        Ok(lock(&self.inner.datasets)?.entry(name.to_string()).or_insert(ds).clone())
    }

    /// Bag tree of a dataset; trees with default selection settings are cached.
    pub fn tree(&self, name: &str, method: Method, selection: &SelectionConfig) -> ApiResult<Arc<MilTree>> {
        let cacheable = *selection == SelectionConfig::default();
        let key = (name.to_string(), method);
        if cacheable {
            if let Some(t) = lock(&self.inner.trees)?.get(&key) {
                return Ok(t.clone());
            }
        }
        let ds = self.dataset(name)?;
        let (tree, _) = build_miltree(ds, method, selection)?;
        let tree = Arc::new(tree);
        if !cacheable {
            return Ok(tree);
        }
        Ok(lock(&self.inner.trees)?.entry(key).or_insert(tree).clone())
    }

    pub fn insert_session(&self, session: Session) -> ApiResult<Uuid> {
        let id = Uuid::new_v4();
        self.inner
            .sessions
            .write()
            .map_err(|_| ApiError::internal("session table lock poisoned"))?
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        let key = Uuid::parse_str(id).map_err(|_| ApiError::unknown_session(id))?;
        self.inner
            .sessions
            .read()
            .map_err(|_| ApiError::internal("session table lock poisoned"))?
            .get(&key)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn remove_session(&self, id: &str) -> ApiResult<()> {
        let key = Uuid::parse_str(id).map_err(|_| ApiError::unknown_session(id))?;
        self.inner
            .sessions
            .write()
            .map_err(|_| ApiError::internal("session table lock poisoned"))?
            .remove(&key)
            .map(|_| ())
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Runs `f` on the locked session; one writer at a time per session.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> ApiResult<T>) -> ApiResult<T> {
        let handle = self.session(id)?;
        let mut guard = lock(&handle)?;
        f(&mut guard)
    }
}
