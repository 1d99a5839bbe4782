//! Network composition: sequential chaining and side-by-side stacking.
//!
//! `parallel` builds one network that applies two encoders to disjoint
//! column ranges of the same batch by placing their weights on the block
//! diagonal of a wider network. Together with `chain` this turns a split
//! architecture (two encoders feeding a head across a network cut) into a
//! single monolithic network over the concatenated inputs, which is the
//! reference that the split training path is tested against.

use crate::error::{Error, Result};
use crate::nn::network::{Activation, LayerSpec, Network, ParamVector};

/// Feeds `a`'s outputs into `b`, returning one combined network.
pub fn chain(a: &Network, b: &Network) -> Result<Network> {
    if a.output_dim() != b.input_dim() {
        return Err(Error::shape(
            "network chain",
            format!("{} columns at the junction", a.output_dim()),
            format!("{} inputs", b.input_dim()),
        ));
    }
    let mut layers = a.layers().to_vec();
    layers.extend_from_slice(b.layers());
    let params = ParamVector::concat(&[a.params(), b.params()]);
    Network::from_params(layers, params)
}

/// Runs `a` and `b` side by side on adjacent column blocks.
///
/// The input is `[a's columns | b's columns]` and the output likewise. Both
/// networks must have the same depth and per-layer activations, and softmax
/// is rejected because it would couple the two blocks.
pub fn parallel(a: &Network, b: &Network) -> Result<Network> {
    if a.layers().len() != b.layers().len() {
        return Err(Error::shape(
            "network parallel",
            format!("{} layers in both branches", a.layers().len()),
            format!("{} layers", b.layers().len()),
        ));
    }
    for (i, (la, lb)) in a.layers().iter().zip(b.layers()).enumerate() {
        if la.activation != lb.activation {
            return Err(Error::shape(
                "network parallel",
                format!("matching activations at layer {i}"),
                "differing activations".to_string(),
            ));
        }
        if la.activation == Activation::Softmax {
            return Err(Error::shape(
                "network parallel",
                "activations that act per column",
                "softmax".to_string(),
            ));
        }
    }
    let layers: Vec<LayerSpec> = a
        .layers()
        .iter()
        .zip(b.layers())
        .map(|(la, lb)| LayerSpec::new(la.input + lb.input, la.output + lb.output, la.activation))
        .collect();
    let total: usize = layers.iter().map(LayerSpec::param_count).sum();
    let mut flat = vec![0.0; total];

    let mut a_off = 0;
    let mut b_off = 0;
    let mut off = 0;
    for ((la, lb), l) in a.layers().iter().zip(b.layers()).zip(&layers) {
        let aw = &a.params().values()[a_off..a_off + la.input * la.output];
        let bw = &b.params().values()[b_off..b_off + lb.input * lb.output];
        for i in 0..la.input {
            let dst = &mut flat[off + i * l.output..off + i * l.output + la.output];
            dst.copy_from_slice(&aw[i * la.output..(i + 1) * la.output]);
        }
        for i in 0..lb.input {
            let row = off + (la.input + i) * l.output + la.output;
            flat[row..row + lb.output].copy_from_slice(&bw[i * lb.output..(i + 1) * lb.output]);
        }
        let ab = &a.params().values()[a_off + la.input * la.output..a_off + la.param_count()];
        let bb = &b.params().values()[b_off + lb.input * lb.output..b_off + lb.param_count()];
        let bias = off + l.input * l.output;
        flat[bias..bias + la.output].copy_from_slice(ab);
        flat[bias + la.output..bias + l.output].copy_from_slice(bb);
        a_off += la.param_count();
        b_off += lb.param_count();
        off += l.param_count();
    }
    Network::from_params(layers, ParamVector::from_vec(flat))
}

/// Reads the two diagonal blocks back out of a flat vector laid out like
/// [`parallel`] produced it. Off-diagonal entries are ignored, which makes
/// this equally usable on parameter vectors and on gradient vectors.
pub fn extract_parallel(
    a_layers: &[LayerSpec],
    b_layers: &[LayerSpec],
    flat: &ParamVector,
) -> Result<(ParamVector, ParamVector)> {
    if a_layers.len() != b_layers.len() {
        return Err(Error::shape(
            "parallel extraction",
            format!("{} layers in both branches", a_layers.len()),
            format!("{} layers", b_layers.len()),
        ));
    }
    let expected: usize = a_layers
        .iter()
        .zip(b_layers)
        .map(|(la, lb)| {
            let combined = LayerSpec::new(la.input + lb.input, la.output + lb.output, la.activation);
            combined.param_count()
        })
        .sum();
    if flat.len() != expected {
        return Err(Error::shape(
            "parallel extraction",
            format!("{expected} values"),
            format!("{} values", flat.len()),
        ));
    }
    let mut a_part = Vec::new();
    let mut b_part = Vec::new();
    let mut off = 0;
    for (la, lb) in a_layers.iter().zip(b_layers) {
        let out = la.output + lb.output;
        for i in 0..la.input {
            a_part.extend_from_slice(&flat.values()[off + i * out..off + i * out + la.output]);
        }
        for i in 0..lb.input {
            let row = off + (la.input + i) * out + la.output;
            b_part.extend_from_slice(&flat.values()[row..row + lb.output]);
        }
        let bias = off + (la.input + lb.input) * out;
        a_part.extend_from_slice(&flat.values()[bias..bias + la.output]);
        b_part.extend_from_slice(&flat.values()[bias + la.output..bias + out]);
        off = bias + out;
    }
    Ok((ParamVector::from_vec(a_part), ParamVector::from_vec(b_part)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::matrix::Matrix;
    use crate::rng::substream;

    fn encoder(input: usize, output: usize, label: &str) -> Network {
        let layers = vec![
            LayerSpec::new(input, 4, Activation::Relu),
            LayerSpec::new(4, output, Activation::Identity),
        ];
        Network::seeded(layers, &mut substream(7, label)).unwrap()
    }

    #[test]
    fn chain_matches_sequential_application() {
        let a = encoder(3, 2, "a");
        let b = encoder(2, 5, "b");
        let combined = chain(&a, &b).unwrap();
        let x = Matrix::from_rows(&[vec![0.2, -1.0, 0.7], vec![1.3, 0.4, -0.6]]).unwrap();
        let via_parts = b.predict(&a.predict(&x).unwrap()).unwrap();
        let via_chain = combined.predict(&x).unwrap();
        assert_eq!(via_parts, via_chain);
    }

    #[test]
    fn parallel_matches_independent_application() {
        let a = encoder(3, 2, "a");
        let b = encoder(2, 4, "b");
        let combined = parallel(&a, &b).unwrap();
        assert_eq!(combined.input_dim(), 5);
        assert_eq!(combined.output_dim(), 6);
        let xa = Matrix::from_rows(&[vec![0.2, -1.0, 0.7], vec![1.3, 0.4, -0.6]]).unwrap();
        let xb = Matrix::from_rows(&[vec![0.9, -0.1], vec![-0.4, 0.8]]).unwrap();
        let expected = a.predict(&xa).unwrap().hcat(&b.predict(&xb).unwrap()).unwrap();
        let actual = combined.predict(&xa.hcat(&xb).unwrap()).unwrap();
        for r in 0..expected.rows() {
            for c in 0..expected.cols() {
                assert!(
                    (expected.get(r, c) - actual.get(r, c)).abs() < 1e-12,
                    "({r},{c})"
                );
            }
        }
    }

    #[test]
    fn extraction_inverts_parallel_layout() {
        let a = encoder(3, 2, "a");
        let b = encoder(2, 4, "b");
        let combined = parallel(&a, &b).unwrap();
        let (pa, pb) = extract_parallel(a.layers(), b.layers(), combined.params()).unwrap();
        assert_eq!(&pa, a.params());
        assert_eq!(&pb, b.params());
    }

    #[test]
    fn mismatched_branches_rejected() {
        let a = encoder(3, 2, "a");
        let deep = Network::seeded(
            vec![
                LayerSpec::new(2, 3, Activation::Relu),
                LayerSpec::new(3, 3, Activation::Relu),
                LayerSpec::new(3, 2, Activation::Identity),
            ],
            &mut substream(7, "deep"),
        )
        .unwrap();
        assert!(parallel(&a, &deep).is_err());
        let sig = Network::seeded(
            vec![
                LayerSpec::new(2, 3, Activation::Sigmoid),
                LayerSpec::new(3, 2, Activation::Identity),
            ],
            &mut substream(7, "sig"),
        )
        .unwrap();
        assert!(parallel(&a, &sig).is_err());
    }

    #[test]
    fn chain_junction_mismatch_rejected() {
        let a = encoder(3, 2, "a");
        let b = encoder(3, 4, "b");
        assert!(chain(&a, &b).is_err());
    }
}
