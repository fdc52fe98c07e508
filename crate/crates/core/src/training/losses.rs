use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before logs.
pub const LOG_EPS: f64 = 1e-7;

/// Discriminator and code-discriminator outputs for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscOutputs {
    pub d_real: f64,
    pub d_recon: f64,
    pub d_fake: f64,
    pub c_real: f64,
    pub c_rand: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub eg: f64,
    pub d: f64,
    pub c: f64,
}

pub(crate) fn ln_clamped(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()
}

/// Encoder-generator, discriminator and code-discriminator losses.
pub fn alpha_gan_losses(o: &DiscOutputs, mae: f64, lambda: f64) -> Losses {
    Losses {
        eg: lambda * mae - ln_clamped(o.d_recon) - ln_clamped(o.d_fake) - ln_clamped(1.0 - o.c_real),
        d: -ln_clamped(o.d_real) - ln_clamped(1.0 - o.d_recon) - ln_clamped(1.0 - o.d_fake),
        c: -ln_clamped(o.c_real) - ln_clamped(1.0 - o.c_rand),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn half() -> DiscOutputs {
        DiscOutputs {
            d_real: 0.5,
            d_recon: 0.5,
            d_fake: 0.5,
            c_real: 0.5,
            c_rand: 0.5,
        }
    }

    #[test]
    fn all_half() {
        let l = alpha_gan_losses(&half(), 0.2, 10.0);
        assert!((l.eg - (2.0 + 3.0 * LN_2)).abs() < 1e-9);
        assert!((l.d - 3.0 * LN_2).abs() < 1e-9);
        assert!((l.c - 2.0 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfect_discriminators() {
        let e = LOG_EPS;
        let o = DiscOutputs {
            d_real: 1.0 - e,
            d_recon: e,
            d_fake: e,
            c_real: 1.0 - e,
            c_rand: e,
        };
        let l = alpha_gan_losses(&o, 0.0, 10.0);
        assert!(l.d.abs() < 1e-6 && l.c.abs() < 1e-6);
    }

    #[test]
    fn finite_on_the_closed_interval() {
        for p in [0.0, 1.0] {
            let o = DiscOutputs {
                d_real: p,
                d_recon: p,
                d_fake: 1.0 - p,
                c_real: p,
                c_rand: 1.0 - p,
            };
            let l = alpha_gan_losses(&o, 1.0, 10.0);
            assert!(l.eg.is_finite() && l.d.is_finite() && l.c.is_finite());
        }
    }

    #[test]
    fn derivatives_match_closed_form() {
        let o = DiscOutputs {
            d_real: 0.7,
            d_recon: 0.3,
            d_fake: 0.4,
            c_real: 0.6,
            c_rand: 0.2,
        };
        let h = 1e-6;
        let cases: [(&str, fn(&mut DiscOutputs, f64), fn(&Losses) -> f64, f64); 8] = [
            ("d/d_real", |o, d| o.d_real += d, |l| l.d, -1.0 / 0.7),
            ("d/d_recon", |o, d| o.d_recon += d, |l| l.d, 1.0 / 0.7),
            ("d/d_fake", |o, d| o.d_fake += d, |l| l.d, 1.0 / 0.6),
            ("eg/d_recon", |o, d| o.d_recon += d, |l| l.eg, -1.0 / 0.3),
            ("eg/d_fake", |o, d| o.d_fake += d, |l| l.eg, -1.0 / 0.4),
            ("eg/c_real", |o, d| o.c_real += d, |l| l.eg, 1.0 / 0.4),
            ("c/c_real", |o, d| o.c_real += d, |l| l.c, -1.0 / 0.6),
            ("c/c_rand", |o, d| o.c_rand += d, |l| l.c, 1.0 / 0.8),
        ];
        for (name, shift, pick, exact) in cases {
            let (mut up, mut dn) = (o, o);
            shift(&mut up, h);
            shift(&mut dn, -h);
            let num = (pick(&alpha_gan_losses(&up, 0.1, 10.0)) - pick(&alpha_gan_losses(&dn, 0.1, 10.0))) / (2.0 * h);
            assert!((num - exact).abs() < 1e-6, "{name}: {num} vs {exact}");
        }
        let up = alpha_gan_losses(&o, 0.1 + h, 10.0).eg;
        let dn = alpha_gan_losses(&o, 0.1 - h, 10.0).eg;
        assert!(((up - dn) / (2.0 * h) - 10.0).abs() < 1e-6);
    }
}
