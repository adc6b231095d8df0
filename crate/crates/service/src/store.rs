//! The committed session state and its single serialized writer.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use tokio::sync::{watch, Mutex};

use sourcerer_core::session::{apply_event, load_session, save_session, LoggedEvent, SessionEvent, TriageSession};
use sourcerer_core::validate::validate_session;

use crate::ServiceError;

/// One committed state. The revision is the length of the event log, so it
/// survives restarts and grows by one per applied event.
#[derive(Debug)]
pub struct Snapshot {
    pub session: TriageSession,
    pub revision: u64,
}

impl Snapshot {
    fn new(session: TriageSession) -> Self {
        let revision = session.events.len() as u64;
        Snapshot { session, revision }
    }
}

/// Readers take the latest snapshot without waiting on the writer; the
/// writer persists each new state before publishing it.
#[derive(Debug)]
pub struct SessionStore {
    path: PathBuf,
    writer: Mutex<()>,
    current: watch::Sender<Arc<Snapshot>>,
}

impl SessionStore {
    /// Loads and validates the session file at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        let bytes = std::fs::read(&path).map_err(|source| ServiceError::Io { path: path.clone(), source })?;
        let session = load_session(&bytes)?;
        let violations = validate_session(&session);
        if !violations.is_empty() {
            return Err(sourcerer_core::Error::InvalidSession(violations).into());
        }
        let (current, _) = watch::channel(Arc::new(Snapshot::new(session)));
        Ok(SessionStore {
            path,
            writer: Mutex::new(()),
            current,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.current.subscribe()
    }

    /// Applies `build(current)` as the next event. The new state is written
    /// to disk before it becomes visible to readers.
    pub async fn mutate(
        &self,
        build: impl FnOnce(&TriageSession) -> Result<SessionEvent, sourcerer_core::Error>,
    ) -> Result<(Arc<Snapshot>, LoggedEvent), ServiceError> {
        let _guard = self.writer.lock().await;
        let current = self.snapshot();
        let event = build(&current.session)?;
        let next = apply_event(&current.session, event, Utc::now())?;
        let logged = next.events.last().cloned().expect("apply_event appends to the log");
        let bytes = save_session(&next);
        let path = self.path.clone();
        tokio::task::spawn_blocking(move || write_atomically(&path, &bytes))
            .await
            .expect("persist task does not panic")?;
        let snapshot = Arc::new(Snapshot::new(next));
        self.current.send_replace(snapshot.clone());
        log::info!("revision {}: {:?}", snapshot.revision, logged.event);
        Ok((snapshot, logged))
    }
}

/// Writes to a temporary file in the same directory, syncs it and renames
/// it over `path`.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    use std::io::Write;
    let io = |source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut file = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    file.write_all(bytes).map_err(io)?;
    file.as_file().sync_all().map_err(io)?;
    file.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
