mod common;

use cerebra_core::codec::active_inputs;
use cerebra_core::compiler::FabricImage;
use cerebra_core::fabric::{Fabric, FabricConfig};
use cerebra_core::harness::{Prepared, Variant};
use cerebra_core::neuron::DecaySelector;
use cerebra_core::noc::SpikeNetConfig;
use cerebra_core::oracle::behavioral_run;
use cerebra_core::packet::CLUSTER_GROUPS;
use cerebra_core::weight_store::RowAddr;
use common::{first_divergence, random_network, random_stimulus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loaded(image: &FabricImage, capacity: usize) -> Fabric {
    let mut f = Fabric::new(FabricConfig { spike_net: SpikeNetConfig::with_capacity(capacity), ..Default::default() });
    f.load_model(&image.init).unwrap();
    f
}

#[test]
fn image_directory_loads_the_same_fabric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let net = random_network(&mut rng, 128, &DecaySelector::ALL);
        let image = FabricImage::compile(&net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        image.write_dir(dir.path()).unwrap();
        let back = FabricImage::read_dir(dir.path()).unwrap();
        assert_eq!(back, image);
        let (a, b) = (loaded(&image, 16), loaded(&back, 16));
        assert_eq!(a.snapshot(), b.snapshot());
        assert!(a.load_cycles() > 0);

        // Every emitted row is resident and nothing else is.
        let rows: usize = image.manifest.rows_per_group.iter().sum();
        let resident: usize = (0..CLUSTER_GROUPS).map(|g| a.store(g).memory().nonzero_rows().count()).sum();
        assert_eq!(resident, rows);
        for g in 0..CLUSTER_GROUPS {
            for (addr, row) in a.store(g).memory().nonzero_rows() {
                assert!(addr.get() < image.manifest.rows_per_group[g] as u16, "row {} of group {g}", addr.get());
                assert_eq!(a.store(g).memory().peek(RowAddr::new(addr.get()).unwrap()), row);
            }
        }
    }
}

#[test]
fn every_timestep_ends_drained() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let net = random_network(&mut rng, 128, &DecaySelector::ALL);
        let image = FabricImage::compile(&net).unwrap();
        let mut f = loaded(&image, rng.gen_range(1..=4));
        let placement = &image.manifest.placement;
        for active in active_inputs(&random_stimulus(&mut rng, net.layers[0], 20)) {
            let packets: Vec<_> = active.iter().map(|&i| placement.input_packet(i)).collect();
            let r = f.run_timestep(&packets).unwrap();
            assert!(r.cycles_elapsed >= 1);
            assert!(f.spike_network().is_drained());
            assert!((0..CLUSTER_GROUPS).all(|g| f.store(g).is_complete()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// More stimulus on the first timestep never finishes in fewer cycles.
    #[test]
    fn timestep_cycles_are_monotone_in_stimulus(seed: u64, capacity in 1usize..=16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 128, &DecaySelector::ALL);
        let image = FabricImage::compile(&net).unwrap();
        let base = loaded(&image, capacity);
        let placement = &image.manifest.placement;
        let mut order: Vec<usize> = (0..net.layers[0]).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut prev = 0;
        for k in 0..=order.len() {
            let mut f = base.clone();
            let packets: Vec<_> = order[..k].iter().map(|&i| placement.input_packet(i)).collect();
            let cycles = f.run_timestep(&packets).unwrap().cycles_elapsed;
            prop_assert!(cycles >= prev, "{} inputs took {} cycles, {} inputs took {}", k, cycles, k - 1, prev);
            prev = cycles;
        }
    }

    /// Networks of up to 512 neurons, most spanning several cluster groups,
    /// match the behavioral model.
    #[test]
    fn large_networks_match_the_behavioral_model(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, 512, &DecaySelector::ALL);
        let trains = random_stimulus(&mut rng, net.layers[0], 12);
        let image = FabricImage::compile(&net).unwrap();
        let expected = behavioral_run(&image.quantized, &active_inputs(&trains));
        let (got, _) = Prepared::new(image, Variant::CerebraH, 4).unwrap().simulate(&trains).unwrap();
        prop_assert_eq!(first_divergence(&got, &expected), None);
    }
}
