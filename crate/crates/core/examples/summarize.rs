//! Every summary family on a diffusion pool.
//!
//! cargo run --example summarize

use sake::summarize::{fit_projector, project, ProjectorMethod, ProjectorSpec};
use sake::trajstore::{generate_diffusion2d, Diffusion2dSpec};

fn main() -> sake::Result<()> {
    let pool = generate_diffusion2d(&Diffusion2dSpec::new(16, 20, 40, 0.2, 3))?;
    println!("{:<18} {:>4} {:>9}", "method", "k", "explained");
    for method in [
        ProjectorMethod::Pca,
        ProjectorMethod::Svd,
        ProjectorMethod::RandomProjection,
        ProjectorMethod::Probes,
        ProjectorMethod::Identity,
    ] {
        let spec = ProjectorSpec {
            max_components: 16,
            ..ProjectorSpec::with_method(method)
        };
        let proj = fit_projector(&pool.view(), &spec)?;
        let set = project(&proj, &pool.view())?;
        let explained = proj.explained().map_or("-".into(), |e| format!("{e:.4}"));
        println!("{:<18} {:>4} {:>9}   first summary {:.3?}", method.name(), proj.k(), explained, &set.state(0, 0)[..2.min(set.k())]);
    }
    Ok(())
}
