//! The preference mechanism on scalars: sample an ordered latent pair, soft-
//! label which prediction "should" be faster, and score the assignment.

use prefcvae::prefloss::{
    preference_label_scalar, preference_loss_scalar, sample_latent_pair,
};
use prefcvae::rngstream::{Stream, StreamKind};
use prefcvae::LatentConfig;

fn main() {
    let latent = LatentConfig::default();
    let mut rng = Stream::new(9, StreamKind::PreferencePair);
    let (z0, z1) = sample_latent_pair(&latent, &mut rng);
    let (z0, z1) = (z0[0], z1[0]);
    println!("latent pair z0 = {z0:.4} < z1 = {z1:.4}");

    // m0, m1 are the average speeds of the two decoded predictions. The
    // label interpolates between z0/(z0+z1) and z1/(z0+z1) with the metric
    // gap; the loss is the cross-entropy against the latent magnitudes.
    let eta = 4.0;
    println!("{:>6} {:>6} {:>8} {:>8}", "m0", "m1", "label", "loss");
    for (m0, m1) in [(1.0, 3.0), (2.0, 2.5), (2.0, 2.0), (2.5, 2.0), (3.0, 1.0)] {
        let p = preference_label_scalar(m0, m1, z0, z1, eta);
        let l = preference_loss_scalar(p, z0, z1);
        println!("{m0:>6.1} {m1:>6.1} {p:>8.4} {l:>8.4}");
    }

    // Alignment (slower prediction on the smaller latent) is the minimum.
    let aligned = preference_loss_scalar(preference_label_scalar(1.0, 3.0, z0, z1, eta), z0, z1);
    let opposed = preference_loss_scalar(preference_label_scalar(3.0, 1.0, z0, z1, eta), z0, z1);
    assert!(aligned < opposed);
    println!("aligned {aligned:.4} < opposed {opposed:.4}: the loss rewards alignment");
}
