//! Condenses noisy service logs into a capped error report.

use std::collections::BTreeMap;

use msba_harness::arena::{trim_errors, TrimConfig};

const LOG: &str = r#" * Serving Flask app 'app'
127.0.0.1 - - "GET /borrows HTTP/1.1" 200 -
Traceback (most recent call last):
  File "/usr/lib/python3/site-packages/flask/app.py", line 1473, in wsgi_app
    response = self.full_dispatch_request()
  File "/app/app.py", line 41, in get_borrow
    doc = db.borrows.find_one({"_id": ObjectId(borrow_id)})
bson.errors.InvalidId: 'nope' is not a valid ObjectId
127.0.0.1 - - "GET /borrows/nope HTTP/1.1" 500 -
"#;

fn main() {
    let logs = BTreeMap::from([("Borrows".to_string(), LOG.repeat(3))]);
    let notes = vec!["Borrows answered 500 on GET /borrows/nope".to_string()];
    for cap in [200, 4096] {
        let out = trim_errors(&logs, None, &notes, &TrimConfig { byte_cap: cap, frames: 2 });
        println!("--- cap {cap}: {} bytes\n{out}", out.len());
    }
}
