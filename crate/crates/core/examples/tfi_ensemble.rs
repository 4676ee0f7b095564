//! Trains a small ensemble on the TFI chain and compares with the exact
//! energies.
//!
//! `cargo run --release -p fnqs --example tfi_ensemble -- [dim layers heads steps samples eta shift]`

use fnqs::couplings::CouplingVector;
use fnqs::exact::solve_tfi_chain;
use fnqs::hamiltonian::HamiltonianFamily;
use fnqs::sampler::{Sampler, SamplerConfig};
use fnqs::sr::{SRConfig, Trainer};
use fnqs::vit::{ViT, ViTConfig};

fn main() -> fnqs::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    let n = 16;
    let family = HamiltonianFamily::tfi_chain(n);
    let mut model_cfg = ViTConfig::desk(4);
    model_cfg.dim = arg(0, 12.0) as usize;
    model_cfg.layers = arg(1, 1.0) as usize;
    model_cfg.heads = arg(2, 2.0) as usize;
    let steps = arg(3, 200.0) as usize;
    let samples = arg(4, 4100.0) as usize;
    let sr = SRConfig::new(arg(5, 0.02), arg(6, 1e-4), steps);

    let hs = [0.8, 0.9, 1.0, 1.1, 1.2];
    let couplings: Vec<CouplingVector> = hs.iter().map(|&h| CouplingVector::new(vec![h])).collect();
    let exact: Vec<f64> = hs
        .iter()
        .map(|&h| solve_tfi_chain(&vec![h; n], 1.0).map(|s| s.energy))
        .collect::<fnqs::Result<_>>()?;

    let model = ViT::new(model_cfg, family.clone(), 1)?;
    println!("parameters: {}", model.n_params());
    let sampler = Sampler::new(SamplerConfig::new(samples, 7), &family, hs.len())?;
    let mut trainer = Trainer::new(model, couplings, sr, sampler)?;
    trainer.run(|rec, _| {
        if rec.step % 10 == 0 || rec.step + 1 == steps {
            let errs: Vec<String> = rec
                .energy
                .iter()
                .zip(&exact)
                .map(|(e, x)| format!("{:.2e}", (e - x) / x.abs()))
                .collect();
            println!("{:5} {:.3}s loss {:.5} rel [{}]", rec.step, rec.wall_time, rec.loss, errs.join(" "));
        }
        Ok(())
    })
}
