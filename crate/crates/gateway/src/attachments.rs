//! Out-of-band storage for image and audio bodies, keyed by attachment id.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttachmentError {
    #[error("attachment of {size} bytes exceeds the {cap} byte cap")]
    TooLarge { size: usize, cap: usize },
    #[error("empty attachment")]
    Empty,
    #[error("attachment storage: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AttachmentStore {
    dir: Option<PathBuf>,
    cap: usize,
    memory: Mutex<HashMap<String, Vec<u8>>>,
}

impl AttachmentStore {
    pub fn in_memory(cap: usize) -> Self {
        Self {
            dir: None,
            cap,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: PathBuf, cap: usize) -> std::io::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            cap,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn put(&self, bytes: Vec<u8>) -> Result<String, AttachmentError> {
        if bytes.is_empty() {
            return Err(AttachmentError::Empty);
        }
        if bytes.len() > self.cap {
            return Err(AttachmentError::TooLarge {
                size: bytes.len(),
                cap: self.cap,
            });
        }
        let id = format!("att-{:016x}", rand::random::<u64>());
        match &self.dir {
            Some(dir) => std::fs::write(dir.join(&id), &bytes)?,
            None => {
                self.memory.lock().expect("attachments poisoned").insert(id.clone(), bytes);
            }
        }
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<Vec<u8>> {
        // ids are generated here; anything else could escape the directory
        if !id.starts_with("att-") || !id[4..].chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        match &self.dir {
            Some(dir) => std::fs::read(dir.join(id)).ok(),
            None => self.memory.lock().expect("attachments poisoned").get(id).cloned(),
        }
    }
}
