use dereverb::room::{image_method_rir, reference_room, schroeder_t60};
use std::time::Instant;

fn main() {
    for &t60 in &[0.3, 0.6, 0.9] {
        for &sr in &[8_000u32, 24_000] {
            let spec = reference_room(t60, [3.0, 2.0, 1.25], sr);
            let t0 = Instant::now();
            let rir = image_method_rir(&spec).unwrap();
            let est = schroeder_t60(&rir).unwrap();
            println!(
                "t60 {t60} sr {sr:6}: est {est:.3} ({:+.1}%)  gen {:?}",
                100.0 * (est - t60) / t60,
                t0.elapsed()
            );
        }
    }
}
