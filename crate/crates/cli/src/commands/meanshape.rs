// SPDX-License-Identifier: Apache-2.0

use meshtrace_core::dataset::{open_clips, write_atomic};
use meshtrace_core::mesh::{mean_shape, save_obj, MeanShapeConfig};
use meshtrace_core::pipeline::class_meshes;

use super::{positive, require};
use crate::args::MeanshapeArgs;
use crate::error::CliError;
use crate::table::Table;

pub fn meanshape(a: MeanshapeArgs) -> Result<(), CliError> {
    require(&a.data)?;
    positive("iso", a.iso)?;
    if a.resolution < 2 || a.faces == 0 {
        return Err(CliError::usage("--resolution must be at least 2 and --faces positive"));
    }
    let clips = open_clips(&a.data)?;
    let mut by_class = class_meshes(&clips)?;
    let present: Vec<String> = by_class.keys().map(u32::to_string).collect();
    let meshes = by_class.remove(&a.class_id).ok_or_else(|| {
        CliError::new(
            "invalid_input",
            crate::error::EXIT_USAGE,
            format!("class {} has no instances (present: {})", a.class_id, present.join(", ")),
        )
    })?;
    let cfg = MeanShapeConfig {
        resolution: a.resolution,
        iso: a.iso,
        target_faces: a.faces,
    };
    let mesh = mean_shape(&meshes, &cfg)?;
    write_atomic(&a.out, &save_obj(&mesh))?;

    let mut t = Table::new(&["class", "instances", "vertices", "faces", "surface area"]);
    t.row(vec![
        a.class_id.to_string(),
        meshes.len().to_string(),
        mesh.num_vertices().to_string(),
        mesh.num_faces().to_string(),
        format!("{:.4}", mesh.surface_area()),
    ]);
    print!("{}", t.render());
    Ok(())
}
