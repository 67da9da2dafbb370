use hybridprec_core::channel::random_channel;
use hybridprec_core::dnn::{
    build_dataset, default_architecture, infer_precoders, train, EnsembleConfig, Mlp, OutputCodec,
};
use hybridprec_core::precoder::{factorize_sgd, fully_digital_gmd, hybrid_loss, FactorizeConfig};
use hybridprec_core::rng::{domain, stream};
use hybridprec_core::simulate::{check_hybrid, detect, qpsk_demap, qpsk_map, transmit_with_noise};
use hybridprec_core::CVector;

#[test]
fn channel_to_bits_through_a_factorized_precoder() {
    let h = random_channel(&mut stream(42, domain::CHANNEL, 0), 32, 8, 3, 0.5).unwrap();
    let gmd = fully_digital_gmd(&h, 3).unwrap();
    let cfg = FactorizeConfig {
        learning_rate: 0.2,
        max_iters: 5000,
        ..Default::default()
    };
    let out = factorize_sgd(&gmd.precoder, 6, &cfg).unwrap();
    check_hybrid(&out.factors, 3).unwrap();
    assert!(hybrid_loss(&gmd.precoder, &out.factors).unwrap() < 1e-3);

    let bits = [true, false, false, true, true, true];
    let s = qpsk_map(&bits).unwrap();
    let precoder = out.factors.product();
    let y = transmit_with_noise(&h, &precoder, &gmd.combiner, &s, &CVector::zeros(8)).unwrap();
    let effective = gmd.combiner.adjoint() * &h.matrix * &precoder;
    assert_eq!(qpsk_demap(&detect(&effective, &y).unwrap()), bits);
}

#[test]
fn trained_network_emits_feasible_precoders() {
    let ens = EnsembleConfig {
        nt: 8,
        nr: 2,
        ns: 2,
        p_nlos: 2,
        spacing_ratio: 0.5,
    };
    let codec = OutputCodec::new(8, 2, 2).unwrap();
    let data = build_dataset(&ens, 20, &mut stream(5, domain::DATASET, 0)).unwrap();
    let specs = default_architecture(codec.output_dim(), 2, 0.1);
    let mut net = Mlp::new(32, &specs, &mut stream(5, domain::INIT, 0)).unwrap();
    let cfg = FactorizeConfig {
        learning_rate: 0.01,
        max_iters: 20,
        batch: 5,
        ..Default::default()
    };
    let outcome = train(&mut net, &data, &codec, &cfg).unwrap();
    assert_eq!(outcome.iterations, 20);
    for s in &data.samples {
        check_hybrid(&infer_precoders(&net, &codec, &s.channel).unwrap(), 2).unwrap();
    }
}
