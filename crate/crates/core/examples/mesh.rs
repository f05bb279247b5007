//! Compiling unitaries into rectangular MZI meshes and back.
//!
//! ```text
//! cargo run --example mesh
//! ```

use optinc::photonic::mesh::{decompose_unitary, haar_unitary, reconstruct, MeshProgram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> optinc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in [4, 8, 16, 64] {
        let u = haar_unitary(m, &mut rng);
        let mesh = decompose_unitary(&u)?;
        let err = (&reconstruct(&mesh) - &u).iter().map(|z| z.norm()).fold(0.0, f64::max);
        println!("m={m:2}: {:4} MZIs in {:2} columns, max error {err:.1e}", mesh.mzis.len(), mesh.depth());
    }

    let small = decompose_unitary(&haar_unitary(3, &mut rng))?;
    let text = small.to_text();
    println!("\n3x3 mesh program:\n{text}");
    assert_eq!(MeshProgram::from_text(&text)?, small);
    Ok(())
}
