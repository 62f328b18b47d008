//! ODE and SDE sampling against a Gaussian mixture whose velocity is known exactly.

use backbone_flow::geom::FoldLabel;
use backbone_flow::sampler::analytic::{ks_two_sample, wasserstein1_to_cdf};
use backbone_flow::sampler::{sample_states, GuidanceSpec, MixtureField, SamplerConfig, ScheduleKind, StochasticitySchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mix = MixtureField::new(vec![0.3, 0.7], vec![-2.5, 1.0], vec![0.4, 0.9])?;
    let guidance = GuidanceSpec::conditional(FoldLabel::null());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 5000;

    let ode = sample_states(&mix, n, 1, 1, &guidance, &SamplerConfig::ode(200), None, false, &mut rng)?;
    let ode: Vec<f64> = ode.x.iter().copied().collect();
    let w1 = wasserstein1_to_cdf(&ode, |x| mix.data_cdf(x), -8.0, 8.0, 10_000);
    println!("ODE, 200 steps: W1 to data = {w1:.4}");

    for kind in [ScheduleKind::Main, ScheduleKind::OneMinusT, ScheduleKind::Tan] {
        for gamma in [0.3, 1.0] {
            let cfg = SamplerConfig {
                n_steps: 200,
                schedule: StochasticitySchedule::new(kind),
                gamma,
                self_conditioning: false,
            };
            let sde = sample_states(&mix, n, 1, 1, &guidance, &cfg, None, false, &mut rng)?;
            let sde: Vec<f64> = sde.x.iter().copied().collect();
            println!("SDE {kind:?} gamma={gamma}: KS vs ODE = {:.4}", ks_two_sample(&ode, &sde));
        }
    }
    Ok(())
}
