//! Wall-clock phase timing. Always reports zero on wasm32, where no
//! monotonic clock is available without a host binding.

#[cfg(not(target_arch = "wasm32"))]
#[derive(Debug, Clone, Copy)]
pub struct Timer(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Timer {
    pub fn start() -> Self {
        Timer(std::time::Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
#[derive(Debug, Clone, Copy)]
pub struct Timer;

#[cfg(target_arch = "wasm32")]
impl Timer {
    pub fn start() -> Self {
        Timer
    }

    pub fn secs(&self) -> f64 {
        0.0
    }
}
