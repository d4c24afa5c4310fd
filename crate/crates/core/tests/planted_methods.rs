//! Every concept method against one planted-direction dataset.

use repscope_core::concepts::{fit_concept, project_onto, ConceptMethod, ConceptParams};
use repscope_core::sae::{sae_train, SaeConfig};
use repscope_core::scalar::cosine;
use repscope_core::stats::pearson;
use repscope_core::synth::planted_direction;

#[test]
fn methods_recover_planted_direction() {
    for nuisance in [0.0, 1.0] {
        let (m, ci, w) = planted_direction(2000, 64, 0.1, nuisance, 11);
        let train: Vec<usize> = (0..1400).collect();
        let test: Vec<usize> = (1400..2000).collect();
        let (tx, vx) = (m.select_rows(&train), m.select_rows(&test));
        let (tci, vci) = (&ci[..1400], &ci[1400..]);
        let params = ConceptParams::default();
        let sae_cfg = SaeConfig { m_dict: Some(256), k: 16, epochs: 10, lr: 1e-3, batch_size: 64, seed: 3 };
        let (sae, _) = sae_train(&tx, &sae_cfg).unwrap();
        for method in ConceptMethod::ALL {
            let cv = fit_concept(method, &tx, tci, &params, Some(&sae)).unwrap();
            let cos = cosine(&cv.direction, &w).unwrap();
            let r = pearson(&project_onto(&cv, &vx).unwrap(), vci).unwrap().r;
            if method == ConceptMethod::PcaFirst {
                if nuisance > 0.0 {
                    // the nuisance axis carries most of the variance
                    assert!(r.abs() < 0.3 && cos.abs() < 0.3, "pca_first: cos {cos}, r {r}");
                }
                continue;
            }
            assert!(cos >= 0.85, "{method} (nuisance {nuisance}): cos {cos}");
            assert!(r >= 0.7, "{method} (nuisance {nuisance}): r {r}");
        }
    }
}
