use std::cell::RefCell;

use rustfft::FftPlanner;

use super::{Complex64, DspError};

/// Added to the power spectrum before the log in [`power_cepstrum`].
pub const CEPSTRUM_FLOOR: f64 = 1e-10;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_size(n: usize) -> Result<(), DspError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n));
    }
    Ok(())
}

pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// Inverse DFT scaled by `1/n`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    plan.process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Unnormalized forward DFT of `frame`, zero-padded to `n`.
pub fn fft(frame: &[f64], n: usize) -> Result<Vec<Complex64>, DspError> {
    check_size(n)?;
    if frame.len() > n {
        return Err(DspError::FrameTooLong { frame: frame.len(), n });
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    fft_in_place(&mut buf);
    Ok(buf)
}

/// `|IDFT(ln(|DFT(frame)|² + ε))|²`.
pub fn power_cepstrum(frame: &[f64], n: usize) -> Result<Vec<f64>, DspError> {
    let mut spec = fft(frame, n)?;
    for c in spec.iter_mut() {
        *c = Complex64::new((c.norm_sqr() + CEPSTRUM_FLOOR).ln(), 0.0);
    }
    ifft_in_place(&mut spec);
    Ok(spec.iter().map(|c| c.norm_sqr()).collect())
}
