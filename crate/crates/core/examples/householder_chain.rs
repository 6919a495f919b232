//! Householder chains: orthogonality, norm preservation, the identity start
//! used at injection, and recovering a chain from an arbitrary rotation.

use paid_core::householder::{decompose_orthogonal, reflection_matrix, HouseholderChain};
use paid_core::numkit::{column_norms, matmul_tn, Matrix, SeededRng};

fn main() -> paid_core::Result<()> {
    let h = reflection_matrix(&[1.0, 1.0])?;
    println!("H((1,1)) sends e1 to -e2 and e2 to -e1:");
    for i in 0..h.rows() {
        let row: Vec<String> = h.row(i).iter().map(|v| format!("{v:6.3}")).collect();
        println!("  [{}]", row.join(" "));
    }

    let mut rng = SeededRng::new(3);
    for (dim, r) in [(8, 1), (8, 12), (64, 12), (64, 64)] {
        let chain = HouseholderChain::random(dim, r, &mut rng)?;
        let o = chain.materialize()?;
        let x = rng.gaussian_matrix(dim, 5);
        let ox = chain.apply(&x)?;
        let norm_drift = column_norms(&x)
            .iter()
            .zip(column_norms(&ox))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "dim {dim:>3} r {r:>3}: |OᵀO − I| {:.1e}, norm drift {norm_drift:.1e}",
            matmul_tn(&o, &o)?.max_abs_diff(&Matrix::identity(dim))
        );
    }

    let identity = HouseholderChain::init_identity(16, 12, &mut rng)?;
    println!("identity start: |O − I| = {:.1e}", identity.materialize()?.max_abs_diff(&Matrix::identity(16)));

    let target = HouseholderChain::random(6, 6, &mut rng)?.materialize()?;
    let recovered = decompose_orthogonal(&target)?;
    println!(
        "decomposed a 6x6 rotation into {} reflectors, error {:.1e}",
        recovered.len(),
        recovered.materialize()?.max_abs_diff(&target)
    );
    Ok(())
}
