/// Continuous stream data rate in Mbit/s for `channels` 1-bit PDM streams.
pub fn stream_data_rate(channels: usize, pdm_rate: f64, overhead_fraction: f64) -> f64 {
    channels as f64 * pdm_rate * (1.0 + overhead_fraction) / 1e6
}

/// Phase difference in degrees caused by a clock skew at a given frequency.
pub fn phase_skew_budget(skew: f64, frequency: f64) -> f64 {
    360.0 * skew * frequency
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_rates() {
        assert!((stream_data_rate(200, 3.072e6, 0.0) - 614.4).abs() < 1e-9);
        assert!((stream_data_rate(1, 3.072e6, 0.0) - 3.072).abs() < 1e-12);
        let with_overhead = stream_data_rate(200, 3.072e6, 0.01);
        assert!((with_overhead - 620.0).abs() < 1.0);
    }

    #[test]
    fn skew_budget() {
        assert!((phase_skew_budget(3e-9, 20e3) - 0.0216).abs() < 1e-12);
        assert_eq!(phase_skew_budget(0.0, 12345.0), 0.0);
        assert!((phase_skew_budget(1.2e-9, 1e3) - 4.32e-4).abs() < 1e-15);
        assert!(phase_skew_budget(3e-9, 20e3) < 0.03);
    }
}
