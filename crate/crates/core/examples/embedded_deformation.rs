//! Embedded deformation graph: rotate and lift a few nodes and watch the
//! surface follow smoothly.
//!
//! Run with `cargo run --release --example embedded_deformation`.

use surfalign::deformation::{apply_embedded_deformation, axis_angle_quat, EmbeddedGraph};
use surfalign::mesh::write_obj;
use surfalign::synth::{build_template, Preset};
use surfalign::Vec3;

fn main() -> surfalign::Result<()> {
    let (mesh, _, _) = build_template(Preset::BentPlaneCape, [20, 20])?;
    let graph = EmbeddedGraph::build(&mesh)?;
    println!("{} vertices driven by {} graph nodes", mesh.vertex_count(), graph.node_count());

    let n = graph.node_count();
    let mut rotations = vec![nalgebra::Quaternion::identity(); n];
    let mut translations = vec![Vec3::zeros(); n];
    // push the lowest nodes forward and twist them
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| graph.nodes[a].y.total_cmp(&graph.nodes[b].y));
    for &k in order.iter().take(n / 3) {
        rotations[k] = axis_angle_quat(&Vec3::y(), 0.4);
        translations[k] = Vec3::new(0.0, 0.0, 0.12);
    }
    let deformed = apply_embedded_deformation(&mesh, &graph, &rotations, &translations)?;
    let disp: Vec<f64> = deformed.iter().zip(&mesh.vertices).map(|(a, b)| (a - b).norm()).collect();
    let mean = disp.iter().sum::<f64>() / disp.len() as f64;
    let max = disp.iter().cloned().fold(0.0, f64::max);
    println!("displacement mean {mean:.4} m, max {max:.4} m");

    let path = std::env::temp_dir().join("surfalign_embedded.obj");
    write_obj(&path, &deformed, &mesh.faces, Some((&mesh.uvs, &mesh.face_uvs)), None)?;
    println!("wrote {}", path.display());
    Ok(())
}
