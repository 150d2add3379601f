//! V2I wireless channel: distance path loss, autoregressive small-scale
//! fading, and the achievable uplink rate per vehicle.
//!
//! Each vehicle occupies its own orthogonal sub-band, so links do not
//! interfere and rates are computed independently.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::VehicleState;

/// Small-scale fading update rule.
///
/// `GaussMarkov` is the standard unit-variance AR(1) recursion
/// `s_t = k*s_{t-1} + sqrt(1-k^2)*e_t` with `e_t` circularly symmetric complex
/// Gaussian. `Literal` replaces the innovation with a deterministic
/// `dist^-alpha` term; it is kept for fidelity but leaves the process without
/// unit-variance stationarity, so `GaussMarkov` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingMode {
    GaussMarkov,
    Literal,
}

/// Per-vehicle channel coefficients for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    /// Small-scale fading coefficient per vehicle.
    pub small_scale: Vec<Complex64>,
    /// Large-scale linear power gain per vehicle (path loss only).
    pub large_scale: Vec<f64>,
    /// Total linear power gain per vehicle, `|s|^2 * h`.
    pub gain: Vec<f64>,
}

/// Path loss in dB at the given distance: `128.1 + 37.6*log10(d_km)`.
pub fn path_loss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::Domain {
            op: "path_loss_db",
            reason: format!("distance must be positive, got {distance_km} km"),
        });
    }
    Ok(128.1 + 37.6 * distance_km.log10())
}

/// Large-scale linear power gain at the given distance in meters.
pub fn large_scale_gain(distance_m: f64) -> Result<f64> {
    let db = path_loss_db(distance_m / 1000.0)?;
    Ok(10f64.powf(-db / 10.0))
}

/// Total channel gain from fading coefficient and large-scale gain.
pub fn channel_gain(small_scale: Complex64, large_scale: f64) -> f64 {
    small_scale.norm_sqr() * large_scale
}

/// Achievable uplink rate in bit/s: `B * log2(1 + p*g/sigma^2)`.
pub fn v2i_rate(bandwidth_hz: f64, tx_power_w: f64, gain: f64, noise_power_w: f64) -> f64 {
    let snr = tx_power_w * gain / noise_power_w;
    bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}

fn complex_gaussian_unit<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // Unit total variance: each component N(0, 1/2).
    let comp = Normal::new(0.0, (0.5f64).sqrt()).expect("valid normal");
    Complex64::new(comp.sample(rng), comp.sample(rng))
}

impl ChannelState {
    /// Initial state: `s0` drawn complex Gaussian with unit variance,
    /// large-scale gain from the current vehicle positions.
    pub fn init<R: Rng + ?Sized>(
        vehicles: &[VehicleState],
        bs_position_m: [f64; 2],
        rng: &mut R,
    ) -> Result<Self> {
        let mut small = Vec::with_capacity(vehicles.len());
        let mut large = Vec::with_capacity(vehicles.len());
        let mut gain = Vec::with_capacity(vehicles.len());
        for v in vehicles {
            let s = complex_gaussian_unit(rng);
            let h = large_scale_gain(v.distance_to_m(bs_position_m))?;
            small.push(s);
            large.push(h);
            gain.push(channel_gain(s, h));
        }
        Ok(Self {
            small_scale: small,
            large_scale: large,
            gain,
        })
    }
}

/// Advances the fading process one slot and refreshes the large-scale gain
/// from the (possibly moved) vehicle positions. The gain identity
/// `g = |s|^2 * h` holds exactly on the returned state.
pub fn update_small_scale<R: Rng + ?Sized>(
    prev: &ChannelState,
    vehicles: &[VehicleState],
    bs_position_m: [f64; 2],
    fading_corr: f64,
    path_loss_exp: f64,
    mode: FadingMode,
    rng: &mut R,
) -> Result<ChannelState> {
    if prev.small_scale.len() != vehicles.len() {
        return Err(Error::ShapeMismatch(format!(
            "channel state has {} entries for {} vehicles",
            prev.small_scale.len(),
            vehicles.len()
        )));
    }
    let kappa = fading_corr;
    let mut small = Vec::with_capacity(vehicles.len());
    let mut large = Vec::with_capacity(vehicles.len());
    let mut gain = Vec::with_capacity(vehicles.len());
    for (v, s_prev) in vehicles.iter().zip(&prev.small_scale) {
        let s = match mode {
            FadingMode::GaussMarkov => {
                let innovation = complex_gaussian_unit(rng);
                kappa * s_prev + (1.0 - kappa * kappa).max(0.0).sqrt() * innovation
            }
            FadingMode::Literal => {
                let dist = v.distance_to_m(bs_position_m);
                kappa * s_prev + Complex64::new(dist.powf(-path_loss_exp), 0.0)
            }
        };
        let h = large_scale_gain(v.distance_to_m(bs_position_m))?;
        small.push(s);
        large.push(h);
        gain.push(channel_gain(s, h));
    }
    Ok(ChannelState {
        small_scale: small,
        large_scale: large,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vehicle_at(x: f64) -> VehicleState {
        VehicleState {
            position_m: [x, 0.0],
            speed_mps: 20.0,
            direction: 1.0,
        }
    }

    #[test]
    fn path_loss_reference_points() {
        assert_relative_eq!(path_loss_db(1.0).unwrap(), 128.1, max_relative = 1e-12);
        assert_relative_eq!(path_loss_db(0.1).unwrap(), 90.5, max_relative = 1e-12);
        // 128.1 + 37.6*log10(0.5), evaluated independently at high precision.
        assert_relative_eq!(
            path_loss_db(0.5).unwrap(),
            116.78127216303431,
            max_relative = 1e-12
        );
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn path_loss_increases_with_distance() {
        let mut prev = f64::NEG_INFINITY;
        for d in [0.01, 0.05, 0.1, 0.3, 0.5, 1.0, 2.0] {
            let pl = path_loss_db(d).unwrap();
            assert!(pl > prev);
            prev = pl;
        }
    }

    #[test]
    fn gain_identity_cases() {
        assert_eq!(channel_gain(Complex64::new(1.0, 0.0), 2e-9), 2e-9);
        assert_eq!(channel_gain(Complex64::new(0.0, 0.0), 5.0), 0.0);
        assert_relative_eq!(
            channel_gain(Complex64::new(0.6, 0.8), 1e-9),
            1e-9,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rate_reference_point() {
        // g corresponding to 90.5 dB path loss with unit fading.
        let r = v2i_rate(50e6, 0.2, 8.913e-10, 1e-14);
        assert_relative_eq!(r, 706088816.01772073, max_relative = 1e-12);
        assert_eq!(v2i_rate(50e6, 0.2, 0.0, 1e-14), 0.0);
        // Linear in bandwidth at fixed SNR.
        assert_relative_eq!(
            v2i_rate(100e6, 0.2, 8.913e-10, 1e-14),
            2.0 * r,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rate_monotone_in_gain_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let g = rng.gen_range(1e-14..1e-6);
            let p = rng.gen_range(0.01..1.0);
            let bump_g = v2i_rate(50e6, p, g * 1.01, 1e-14);
            let bump_p = v2i_rate(50e6, p * 1.01, g, 1e-14);
            let base = v2i_rate(50e6, p, g, 1e-14);
            assert!(bump_g > base);
            assert!(bump_p > base);
        }
    }

    #[test]
    fn gauss_markov_kappa_extremes() {
        let vehicles = [vehicle_at(400.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = ChannelState::init(&vehicles, [500.0, 20.0], &mut rng).unwrap();

        // kappa = 1 freezes the fading coefficient.
        let frozen = update_small_scale(
            &state,
            &vehicles,
            [500.0, 20.0],
            1.0,
            2.0,
            FadingMode::GaussMarkov,
            &mut rng.clone(),
        )
        .unwrap();
        assert_relative_eq!(
            frozen.small_scale[0].re,
            state.small_scale[0].re,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            frozen.small_scale[0].im,
            state.small_scale[0].im,
            max_relative = 1e-12
        );

        // kappa = 0 is memoryless: the update equals the fresh innovation.
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let updated = update_small_scale(
            &state,
            &vehicles,
            [500.0, 20.0],
            0.0,
            2.0,
            FadingMode::GaussMarkov,
            &mut rng_a,
        )
        .unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let innovation = complex_gaussian_unit(&mut rng_b);
        assert_eq!(updated.small_scale[0], innovation);
    }

    #[test]
    fn literal_mode_direct_substitution() {
        // dist = 100 m, alpha = 2, s_prev = 1+0j, kappa = 0.2
        // => s = 0.2 + 100^-2 = 0.2001
        let vehicles = [vehicle_at(400.0)];
        let prev = ChannelState {
            small_scale: vec![Complex64::new(1.0, 0.0)],
            large_scale: vec![1.0],
            gain: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = update_small_scale(
            &prev,
            &vehicles,
            [500.0, 0.0],
            0.2,
            2.0,
            FadingMode::Literal,
            &mut rng,
        )
        .unwrap();
        assert_relative_eq!(next.small_scale[0].re, 0.2001, max_relative = 1e-12);
        assert_eq!(next.small_scale[0].im, 0.0);
    }

    #[test]
    fn gain_identity_after_updates() {
        let vehicles = [vehicle_at(100.0), vehicle_at(700.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut state = ChannelState::init(&vehicles, [500.0, 20.0], &mut rng).unwrap();
        for _ in 0..50 {
            state = update_small_scale(
                &state,
                &vehicles,
                [500.0, 20.0],
                0.2,
                2.0,
                FadingMode::GaussMarkov,
                &mut rng,
            )
            .unwrap();
            for i in 0..vehicles.len() {
                assert_eq!(
                    state.gain[i],
                    state.small_scale[i].norm_sqr() * state.large_scale[i]
                );
                assert!(state.large_scale[i] > 0.0);
            }
        }
    }

    #[test]
    fn gauss_markov_unit_variance_stationarity() {
        let vehicles = [vehicle_at(400.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut state = ChannelState::init(&vehicles, [500.0, 20.0], &mut rng).unwrap();
        let steps = 100_000;
        let mut acc = 0.0;
        for _ in 0..steps {
            state = update_small_scale(
                &state,
                &vehicles,
                [500.0, 20.0],
                0.2,
                2.0,
                FadingMode::GaussMarkov,
                &mut rng,
            )
            .unwrap();
            acc += state.small_scale[0].norm_sqr();
        }
        let mean = acc / steps as f64;
        assert!(
            (0.95..=1.05).contains(&mean),
            "long-run |s|^2 mean {mean} outside [0.95, 1.05]"
        );
    }
}
