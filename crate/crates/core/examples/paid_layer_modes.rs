//! Fits one layer to a rotated and rescaled copy of itself under each update
//! mode. Chain modes can reach the target exactly and never move the
//! pairwise structure; free-direction modes fit it by distorting it.

use paid_core::adapt::{AdamWParams, OptimizerState};
use paid_core::householder::HouseholderChain;
use paid_core::nnmodel::Gradients;
use paid_core::numkit::{matmul, SeededRng};
use paid_core::paidlayer::{PaidLinear, UpdateMode};

fn main() -> paid_core::Result<()> {
    let mut rng = SeededRng::new(5);
    let (in_dim, out_dim) = (12, 8);
    let w = rng.gaussian_matrix(in_dim, out_dim).scale(0.4);
    let x = rng.gaussian_matrix(256, in_dim);

    let rotate = HouseholderChain::random(in_dim, 4, &mut rng)?;
    let scales: Vec<f64> = (0..out_dim).map(|j| 1.0 + 0.1 * j as f64).collect();
    let target_w = paid_core::geometry::scale_columns(&rotate.apply(&w)?, &scales);
    let target = matmul(&x, &target_w)?;

    let hp = AdamWParams { learning_rate: 1e-2, ..AdamWParams::default() };
    println!("{:<22} {:>9} {:>10} {:>10} {:>10}", "mode", "params", "mse", "dA", "dS");
    for mode in UpdateMode::ALL {
        let mut layer = PaidLinear::from_pretrained(&w, vec![0.0; out_dim], mode, 12, &mut rng)?;
        let mut opt = OptimizerState::new();
        let mut mse = 0.0;
        for _ in 0..400 {
            let y = layer.forward(&x)?;
            let diff = y.sub(&target)?;
            mse = diff.dot(&diff) / diff.data().len() as f64;
            let (grads, _) = layer.backward(&diff.scale(2.0 / diff.data().len() as f64))?;
            let grads: Gradients = grads.into_named().into_iter().collect();
            opt.step(layer.learnable_params_mut(), &grads, &hp, hp.learning_rate)?;
        }
        let d = layer.drift()?;
        println!(
            "{:<22} {:>9} {mse:>10.2e} {:>10.4} {:>10.2e}",
            mode.to_string(),
            layer.trainable_count(),
            d.delta_a,
            d.delta_s
        );
    }
    Ok(())
}
