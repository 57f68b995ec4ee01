use super::{DspError, SampleBuffer};

/// Linear-interpolation resampler.
///
/// Output length is `round(len * target / source)`. Output sample `j` reads
/// the source at position `j * source / target`; positions past the last
/// sample clamp to it.
pub fn resample(buf: &SampleBuffer, target_rate: u32) -> Result<SampleBuffer, DspError> {
    if target_rate == 0 {
        return Err(DspError::InvalidRate);
    }
    let source_rate = buf.sample_rate();
    if source_rate == target_rate {
        return Ok(buf.clone());
    }
    let src = buf.samples();
    let out_len = (src.len() as f64 * target_rate as f64 / source_rate as f64).round() as usize;
    if src.is_empty() {
        return SampleBuffer::new(Vec::new(), target_rate);
    }

    let last = src.len() - 1;
    let step = source_rate as f64 / target_rate as f64;
    let out = (0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            let frac = if i0 == last { 0.0 } else { frac };
            (src[i0] as f64 * (1.0 - frac) + src[i1] as f64 * frac) as f32
        })
        .collect();
    SampleBuffer::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_rates_is_identity() {
        let buf = SampleBuffer::new(vec![0.1, -0.25, 0.3333], 16_000).unwrap();
        let out = resample(&buf, 16_000).unwrap();
        assert_eq!(out, buf);
    }

    #[test]
    fn constant_survives_downsampling() {
        let buf = SampleBuffer::new(vec![0.7; 3200], 32_000).unwrap();
        let out = resample(&buf, 16_000).unwrap();
        assert_eq!(out.len(), 1600);
        assert_eq!(out.sample_rate(), 16_000);
        assert!(out.samples().iter().all(|&s| s == 0.7));
    }

    #[test]
    fn ramp_upsampled_with_edge_clamp() {
        let buf = SampleBuffer::new(vec![0.0, 1.0, 2.0, 3.0], 8_000).unwrap();
        let out = resample(&buf, 16_000).unwrap();
        assert_eq!(out.samples(), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.0]);
    }

    #[test]
    fn zero_target_rate_rejected() {
        let buf = SampleBuffer::new(vec![0.0; 4], 8_000).unwrap();
        assert!(matches!(resample(&buf, 0), Err(DspError::InvalidRate)));
    }

    #[test]
    fn length_rounds() {
        let buf = SampleBuffer::new(vec![0.0; 441], 44_100).unwrap();
        assert_eq!(resample(&buf, 16_000).unwrap().len(), 160);
    }
}
