//! Benchmark fixtures. The benchmarks themselves live in `benches/`.

use proofread_core::synth::{generate, SynthConfig};
use proofread_core::LabelVolume;

/// A small synthetic fragment volume with edge `edge`.
pub fn fragment_volume(edge: u32, seed: u64) -> LabelVolume {
    let cfg = SynthConfig {
        dims: [edge; 3],
        neuron_count: 12,
        path_length: [edge * 3, edge * 5],
        split_count: 40,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("synthetic volume").0.fragment_volume
}
