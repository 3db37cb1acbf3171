//! Dual-quaternion skinning of a rigged template along a bending motion.
//!
//! Run with `cargo run --release --example skinning`.

use nalgebra::UnitQuaternion;
use surfalign::kinematics::{dq_skin, skinning_transforms, SkeletalPose};
use surfalign::mesh::write_obj;
use surfalign::synth::{build_template, Preset};

fn main() -> surfalign::Result<()> {
    let (mesh, _, skeleton) = build_template(Preset::CylinderSkirt, [32, 12])?;
    println!("template: {} vertices, {} joints", mesh.vertex_count(), skeleton.joint_count());

    let out = std::env::temp_dir().join("surfalign_skinning");
    std::fs::create_dir_all(&out)?;
    for step in 0..5 {
        let angle = 0.15 * step as f64;
        let mut pose = SkeletalPose::identity(skeleton.joint_count());
        for (j, r) in pose.rotations.iter_mut().enumerate().skip(1) {
            *r = UnitQuaternion::from_euler_angles(angle / j as f64, 0.0, 0.5 * angle);
        }
        let joints = skinning_transforms(&skeleton, &pose)?;
        let posed = dq_skin(&mesh.rest_positions(), &mesh.skin_weights, &joints)?;
        let moved = posed.iter().zip(&mesh.vertices).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let path = out.join(format!("skinned_{step}.obj"));
        write_obj(&path, &posed, &mesh.faces, Some((&mesh.uvs, &mesh.face_uvs)), None)?;
        println!("bend {angle:.2} rad: max displacement {moved:.3} m -> {}", path.display());
    }
    Ok(())
}
