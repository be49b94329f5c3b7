//! Synthetic pools, perturbations and the on-disk format.
//!
//! cargo run --example generate_pools

use sake::trajstore::{
    generate_diffusion2d, generate_linear_lag_system, mean_squared_difference, perturb, read_pool_bytes,
    split_pool, write_pool_bytes, Diffusion2dSpec, LinearLagSpec, PerturbSpec, SplitFractions,
};

fn main() -> sake::Result<()> {
    let var = generate_linear_lag_system(&LinearLagSpec::new(4, 3, 60, 60, 0.05, 0))?;
    println!("linear: {:?}, true lag {:?}", var.shape(), var.meta().true_lag());

    let heat = generate_diffusion2d(&Diffusion2dSpec::new(16, 8, 32, 0.2, 0))?;
    let sums: Vec<f64> = (0..heat.timesteps())
        .map(|t| heat.frame(0, t).iter().map(|&v| v as f64).sum())
        .collect();
    println!("diffusion2d: {:?}, mass first/last {:.4}/{:.4}", heat.shape(), sums[0], sums[sums.len() - 1]);

    for spec in [
        PerturbSpec::gaussian_noise(0.05, 1),
        PerturbSpec::downsample(2),
        PerturbSpec::random_mask(0.25, 1),
    ] {
        let p = perturb(&heat, &spec)?;
        let msd = if p.shape() == heat.shape() {
            format!("{:.2e}", mean_squared_difference(&heat, &p)?)
        } else {
            "-".into()
        };
        println!("  {:<22} shape {:?} msd {msd}", spec.label(), p.shape());
    }

    let masked = perturb(&heat, &PerturbSpec::random_mask(0.25, 1))?;
    let bytes = write_pool_bytes(&masked)?;
    assert_eq!(read_pool_bytes(&bytes)?, masked);
    println!("masked pool round-trips through {} bytes", bytes.len());

    let split = split_pool(var, SplitFractions::new(0.6, 0.2, 0.2), 0)?;
    println!(
        "split sizes train/val/test = {}/{}/{}",
        split.train().len(),
        split.val().len(),
        split.test().len()
    );
    Ok(())
}
