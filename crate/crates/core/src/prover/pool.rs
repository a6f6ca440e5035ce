use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Condvar, Mutex};

use tracing::warn;

use super::{BackendError, ProverBackend, Session, SessionOptions};

struct PoolState {
    idle: Vec<Session>,
    live: usize,
}

/// A bounded set of sessions shared by worker threads. Each checkout has
/// exclusive use of its session until the guard drops.
pub struct SessionPool {
    backend: Arc<dyn ProverBackend>,
    options: SessionOptions,
    capacity: usize,
    state: Mutex<PoolState>,
    freed: Condvar,
}

impl SessionPool {
    pub fn new(backend: Arc<dyn ProverBackend>, capacity: usize, options: SessionOptions) -> Self {
        Self {
            backend,
            options,
            capacity: capacity.max(1),
            state: Mutex::new(PoolState {
                idle: Vec::new(),
                live: 0,
            }),
            freed: Condvar::new(),
        }
    }

    pub fn backend(&self) -> &Arc<dyn ProverBackend> {
        &self.backend
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Blocks until a session is free, starting a new one while under
    /// capacity.
    pub fn acquire(&self) -> Result<PooledSession<'_>, BackendError> {
        let mut state = self.state.lock().expect("pool lock");
        loop {
            if let Some(session) = state.idle.pop() {
                return Ok(PooledSession {
                    pool: self,
                    session: Some(session),
                });
            }
            if state.live < self.capacity {
                state.live += 1;
                drop(state);
                return match self.backend.start_session(self.options) {
                    Ok(session) => Ok(PooledSession {
                        pool: self,
                        session: Some(session),
                    }),
                    Err(e) => {
                        self.state.lock().expect("pool lock").live -= 1;
                        self.freed.notify_one();
                        Err(e)
                    }
                };
            }
            state = self.freed.wait(state).expect("pool lock");
        }
    }

    fn release(&self, mut session: Session) {
        if session.needs_recycle() {
            if let Err(e) = session.recycle() {
                warn!(error = %e, session = %session.handle().session_id, "dropping session that failed to restart");
                self.state.lock().expect("pool lock").live -= 1;
                self.freed.notify_one();
                return;
            }
        }
        self.state.lock().expect("pool lock").idle.push(session);
        self.freed.notify_one();
    }
}

pub struct PooledSession<'a> {
    pool: &'a SessionPool,
    session: Option<Session>,
}

impl Deref for PooledSession<'_> {
    type Target = Session;

    fn deref(&self) -> &Session {
        self.session.as_ref().expect("session present until drop")
    }
}

impl DerefMut for PooledSession<'_> {
    fn deref_mut(&mut self) -> &mut Session {
        self.session.as_mut().expect("session present until drop")
    }
}

impl Drop for PooledSession<'_> {
    fn drop(&mut self) {
        if let Some(s) = self.session.take() {
            self.pool.release(s);
        }
    }
}
