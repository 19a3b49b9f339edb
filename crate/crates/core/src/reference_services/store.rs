use std::sync::Mutex;

use indexmap::IndexMap;
use serde_json::{Map, Value};

pub type Document = Map<String, Value>;

/// In-memory document collection with sequential, string-rendered ids.
#[derive(Debug, Default)]
pub struct DocStore {
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    next: u64,
    docs: IndexMap<String, Document>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Allocates an id without storing anything.
    pub fn next_id(&self) -> String {
        let mut inner = self.lock();
        inner.next += 1;
        format!("{:024x}", inner.next)
    }

    pub fn insert(&self, fields: Document) -> String {
        let id = self.next_id();
        self.insert_with_id(&id, fields);
        id
    }

    pub fn insert_with_id(&self, id: &str, fields: Document) {
        let mut doc = Document::new();
        doc.insert("id".into(), Value::String(id.to_string()));
        doc.extend(fields.into_iter().filter(|(k, _)| k != "id"));
        self.lock().docs.insert(id.to_string(), doc);
    }

    pub fn get(&self, id: &str) -> Option<Document> {
        self.lock().docs.get(id).cloned()
    }

    pub fn list(&self) -> Vec<Document> {
        self.lock().docs.values().cloned().collect()
    }

    /// Overwrites the given fields; returns false when the id is unknown.
    pub fn update(&self, id: &str, fields: Document) -> bool {
        match self.lock().docs.get_mut(id) {
            Some(doc) => {
                for (k, v) in fields {
                    if k != "id" {
                        doc.insert(k, v);
                    }
                }
                true
            }
            None => false,
        }
    }

    pub fn remove(&self, id: &str) -> bool {
        self.lock().docs.shift_remove(id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(v: Value) -> Document {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn id_round_trip() {
        let s = DocStore::new();
        let id = s.insert(doc(json!({"name": "Ada", "id": "spoofed"})));
        assert_eq!(id, "000000000000000000000001");
        assert_eq!(Value::Object(s.get(&id).unwrap()), json!({"id": id, "name": "Ada"}));
        assert!(s.update(&id, doc(json!({"name": "Grace"}))));
        assert_eq!(s.get(&id).unwrap()["name"], "Grace");
        assert!(s.remove(&id));
        assert!(s.get(&id).is_none());
        assert!(!s.update(&id, Document::new()));
        assert_ne!(s.insert(Document::new()), id);
    }
}
