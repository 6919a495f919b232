//! Magnitude, absolute angle and pairwise structure of a weight matrix, and
//! how each one reacts to a rotation versus an unstructured perturbation.

use paid_core::geometry::{decompose, hyperspherical_energy, GeometryDelta};
use paid_core::householder::HouseholderChain;
use paid_core::numkit::{Matrix, SeededRng};

fn main() -> paid_core::Result<()> {
    let w = Matrix::from_rows(&[&[3.0, 1.0], &[0.0, 1.0]]);
    let dw = decompose(&w)?;
    println!("magnitudes {:?}", dw.magnitude);
    println!("HE of its directions {:.5}", hyperspherical_energy(&dw.direction)?);
    println!("HE(I2) = {:.5} (sqrt 2)", hyperspherical_energy(&Matrix::identity(2))?);

    let mut rng = SeededRng::new(7);
    let w = rng.gaussian_matrix(16, 10);
    let rotation = HouseholderChain::random(16, 12, &mut rng)?;
    let rotated = rotation.apply(&w)?;
    let noise = rng.gaussian_matrix(16, 10).scale(0.3);
    let perturbed = w.add(&noise)?;
    let scaled = w.scale(1.5);

    println!("\n{:<12} {:>10} {:>10} {:>10}", "change", "dM", "dA", "dS");
    for (name, other) in [("rotation", &rotated), ("perturbation", &perturbed), ("scaling", &scaled)] {
        let d = GeometryDelta::between(&w, other)?;
        println!("{name:<12} {:>10.4} {:>10.4} {:>10.2e}", d.delta_m, d.delta_a, d.delta_s);
    }
    Ok(())
}
