use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::NaiveDate;

/// Records which dates each fitting step read.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<BTreeMap<String, Vec<NaiveDate>>>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn record(&self, purpose: &str, dates: impl IntoIterator<Item = NaiveDate>) {
        let mut e = self.entries.lock().expect("audit lock");
        e.entry(purpose.to_string()).or_default().extend(dates);
    }

    /// Latest date read for `purpose`.
    pub fn max_date(&self, purpose: &str) -> Option<NaiveDate> {
        let e = self.entries.lock().expect("audit lock");
        e.get(purpose).and_then(|d| d.iter().max().copied())
    }

    /// Latest date read by any purpose.
    pub fn max_any(&self) -> Option<NaiveDate> {
        let e = self.entries.lock().expect("audit lock");
        e.values().flatten().max().copied()
    }

    pub fn purposes(&self) -> Vec<String> {
        self.entries.lock().expect("audit lock").keys().cloned().collect()
    }

    /// One line per distinct `(purpose, date)`, sorted.
    pub fn render(&self) -> String {
        let e = self.entries.lock().expect("audit lock");
        let mut out = String::new();
        for (purpose, dates) in e.iter() {
            let mut ds = dates.clone();
            ds.sort();
            ds.dedup();
            for d in ds {
                out.push_str(&format!("{purpose},{d}\n"));
            }
        }
        out
    }
}
