#![allow(dead_code)]

use icac::approximator::DenseNet;
use rand::RngCore;

/// Prints one verdict line and returns whether it passed.
pub fn report(criterion: &str, passed: bool, detail: &str) -> bool {
    println!("[{}] {criterion}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

/// Random source that always yields the same bits, so uniform draws are 0.5.
pub struct ConstRng(pub u64);

impl RngCore for ConstRng {
    fn next_u32(&mut self) -> u32 {
        (self.0 >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        self.0
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for (i, b) in dest.iter_mut().enumerate() {
            *b = self.0.to_le_bytes()[i % 8];
        }
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Bits for which `rng.gen::<f64>()` returns exactly 0.5.
pub const HALF: u64 = 1 << 63;

/// Central difference of `loss` with respect to parameter `index` of `net`.
pub fn central_difference(net: &DenseNet, index: usize, h: f64, mut loss: impl FnMut(&DenseNet) -> f64) -> f64 {
    let mut probe = net.clone();
    let original = *probe.params().nth(index).unwrap();
    *probe.params_mut().nth(index).unwrap() = original + h;
    let plus = loss(&probe);
    *probe.params_mut().nth(index).unwrap() = original - h;
    let minus = loss(&probe);
    (plus - minus) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
