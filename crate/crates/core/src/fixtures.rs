//! Small bundled databases and benchmarks for offline demos and tests.
//!
//! `network_1` reproduces the tables shown in the reference prompts, `geo`
//! is a GeoQuery slice, and `car_1`/`orchestra` are Spider slices.

use std::path::{Path, PathBuf};

use rusqlite::Connection;

pub const DATABASES: [(&str, &str); 4] = [
    ("network_1", include_str!("../fixtures/network_1.sql")),
    ("car_1", include_str!("../fixtures/car_1.sql")),
    ("orchestra", include_str!("../fixtures/orchestra.sql")),
    ("geo", include_str!("../fixtures/geo.sql")),
];

pub const BENCHMARKS: [(&str, &str); 3] = [
    ("dev.json", include_str!("../fixtures/dev.json")),
    ("geo_train.json", include_str!("../fixtures/geo_train.json")),
    ("geo_dev.json", include_str!("../fixtures/geo_dev.json")),
];

pub fn script(db_id: &str) -> Option<&'static str> {
    DATABASES.iter().find(|(id, _)| *id == db_id).map(|(_, s)| *s)
}

/// Creates `path` from a bundled script, replacing any existing file.
pub fn create_database(db_id: &str, path: &Path) -> rusqlite::Result<()> {
    let sql = script(db_id).unwrap_or_else(|| panic!("no bundled database {db_id}"));
    if path.exists() {
        let _ = std::fs::remove_file(path);
    }
    let conn = Connection::open(path)?;
    conn.execute_batch(&format!("BEGIN;\n{sql}\nCOMMIT;"))
}

#[derive(Debug, Clone)]
pub struct FixtureLayout {
    pub root: PathBuf,
    pub db_root: PathBuf,
}

impl FixtureLayout {
    pub fn benchmark(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn db(&self, db_id: &str) -> PathBuf {
        crate::dataset::db_path(&self.db_root, db_id)
    }
}

/// Writes every bundled database under `<root>/database/<db_id>/<db_id>.sqlite`
/// and every benchmark file under `<root>/`.
pub fn materialize(root: &Path) -> std::io::Result<FixtureLayout> {
    let db_root = root.join("database");
    for (db_id, _) in DATABASES {
        let dir = db_root.join(db_id);
        std::fs::create_dir_all(&dir)?;
        create_database(db_id, &dir.join(format!("{db_id}.sqlite")))
            .map_err(std::io::Error::other)?;
    }
    for (name, body) in BENCHMARKS {
        std::fs::write(root.join(name), body)?;
    }
    Ok(FixtureLayout {
        root: root.to_owned(),
        db_root,
    })
}
