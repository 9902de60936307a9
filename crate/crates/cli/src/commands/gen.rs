// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::Path;

use meshtrace_core::dataset::{generate_dataset, suites, FixtureSpec};
use meshtrace_core::Error;

use super::require;
use crate::args::{GenArgs, Suite};
use crate::error::CliError;
use crate::table::Table;

pub fn gen(a: GenArgs, seed: u64) -> Result<(), CliError> {
    let specs = match (&a.spec, a.suite) {
        (Some(path), _) => read_specs(path)?,
        (None, Some(suite)) => {
            if a.frames == 0 {
                return Err(CliError::usage("--frames must be at least 1"));
            }
            match suite {
                Suite::Rotating => suites::rotating_primitives(a.clips, a.frames, seed),
                Suite::Drifting => vec![suites::drifting_cube(a.frames)],
                Suite::Crossing => vec![suites::crossing_objects(a.frames, a.cut)],
                Suite::Occluded => vec![suites::half_occluded_cube(a.frames)],
            }
        }
        (None, None) => return Err(CliError::usage("one of --spec or --suite is required")),
    };
    if specs.is_empty() {
        return Err(CliError::usage("nothing to generate"));
    }
    let mut ids = BTreeSet::new();
    for s in &specs {
        if !ids.insert(s.clip_id.as_str()) {
            return Err(CliError::usage(format!("duplicate clip id `{}`", s.clip_id)));
        }
        s.validate()?;
    }
    let manifests = generate_dataset(&specs, &a.out)?;

    let mut t = Table::new(&["clip", "frames", "objects", "shot cuts"]);
    for m in &manifests {
        let objects: usize = m.frames.iter().map(|f| f.instances.len()).sum();
        let cuts = m.frames.iter().filter(|f| f.shot_transition).count();
        t.row(vec![
            m.clip_id().to_string(),
            m.frames.len().to_string(),
            objects.to_string(),
            cuts.to_string(),
        ]);
    }
    print!("{}", t.render());
    Ok(())
}

/// A JSON fixture spec file: one spec or an array of specs.
fn read_specs(path: &Path) -> Result<Vec<FixtureSpec>, CliError> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let schema = |e: serde_path_to_error::Error<serde_json::Error>| {
        let line = e.inner().line();
        CliError::from(Error::Schema {
            line,
            field: e.path().to_string(),
            msg: e.into_inner().to_string(),
        })
    };
    if text.trim_start().starts_with('[') {
        serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text)).map_err(schema)
    } else {
        let one: FixtureSpec =
            serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text)).map_err(schema)?;
        Ok(vec![one])
    }
}
