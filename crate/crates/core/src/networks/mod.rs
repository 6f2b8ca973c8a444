//! Encoders, decoders and classification heads.

mod checkpoint;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry};
pub use layers::{BatchNorm, Conv2d, ConvTranspose2d, Dense};
pub use params::{Binding, BnUpdate, Ctx, Mode, Param, ParamId, ParamStore};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::Domain;
use crate::engine::{ConvGeom, Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Latent widths supported by the image architecture.
pub const CONV_LATENT_DIMS: [usize; 2] = [3, 10];
pub const IMAGE_SIDE: usize = 28;
pub const MLP_DEFAULT_HIDDEN: usize = 16;
const CLASSIFIER_HIDDEN: usize = 5;

fn check_conv_latent(latent_dim: usize) -> Result<()> {
    if CONV_LATENT_DIMS.contains(&latent_dim) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "the image architecture supports latent_dim 3 or 10, got {latent_dim}"
        )))
    }
}

#[derive(Clone, Debug)]
pub struct ConvEncoder {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    fc: Dense,
}

impl ConvEncoder {
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let h = self.conv1.forward(g, ctx, x)?;
        let h = self.bn1.forward(g, ctx, h)?;
        let h = g.relu(h);
        let h = g.maxpool2d(h, 2, 2)?;
        let h = self.conv2.forward(g, ctx, h)?;
        let h = self.bn2.forward(g, ctx, h)?;
        let h = g.relu(h);
        let h = g.adaptive_maxpool2d(h, 2, 2)?;
        let h = g.flatten(h)?;
        self.fc.forward(g, ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct ConvDecoder {
    fc: Dense,
    up1: ConvTranspose2d,
    bn1: BatchNorm,
    up2: ConvTranspose2d,
    bn2: BatchNorm,
    up3: ConvTranspose2d,
}

impl ConvDecoder {
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        z: NodeId,
    ) -> Result<NodeId> {
        let n = g.value(z).shape()[0];
        let h = self.fc.forward(g, ctx, z)?;
        let h = g.reshape(h, [n, 8, 2, 2])?;
        let h = self.up1.forward(g, ctx, h)?;
        let h = g.relu(h);
        let h = self.bn1.forward(g, ctx, h)?;
        let h = self.up2.forward(g, ctx, h)?;
        let h = g.relu(h);
        let h = self.bn2.forward(g, ctx, h)?;
        let h = self.up3.forward(g, ctx, h)?;
        Ok(g.tanh(h))
    }
}

/// Dense stack with ReLU between layers and an optional tanh on the output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    tanh_output: bool,
}

impl Mlp {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        widths: &[usize],
        tanh_output: bool,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, rng, &format!("{name}.fc{}", i + 1), w[0], w[1]))
            .collect();
        Self {
            layers,
            tanh_output,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, ctx: &Ctx<'_, T>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.relu(h);
            }
            h = layer.forward(g, ctx, h)?;
        }
        Ok(if self.tanh_output { g.tanh(h) } else { h })
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Conv(ConvEncoder),
    Mlp(Mlp),
}

impl Encoder {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        x: NodeId,
    ) -> Result<NodeId> {
        match self {
            Encoder::Conv(e) => e.forward(g, ctx, x),
            Encoder::Mlp(e) => e.forward(g, ctx, x),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Encoder::Conv(e) => {
                let mut ids = vec![e.conv1.weight, e.conv1.bias];
                ids.extend(bn_ids(&e.bn1));
                ids.extend([e.conv2.weight, e.conv2.bias]);
                ids.extend(bn_ids(&e.bn2));
                ids.extend([e.fc.weight, e.fc.bias]);
                ids
            }
            Encoder::Mlp(e) => e.param_ids(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Conv(ConvDecoder),
    Mlp(Mlp),
}

impl Decoder {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &mut Ctx<'_, T>,
        z: NodeId,
    ) -> Result<NodeId> {
        match self {
            Decoder::Conv(d) => d.forward(g, ctx, z),
            Decoder::Mlp(d) => d.forward(g, ctx, z),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Decoder::Conv(d) => {
                let mut ids = vec![d.fc.weight, d.fc.bias, d.up1.weight, d.up1.bias];
                ids.extend(bn_ids(&d.bn1));
                ids.extend([d.up2.weight, d.up2.bias]);
                ids.extend(bn_ids(&d.bn2));
                ids.extend([d.up3.weight, d.up3.bias]);
                ids
            }
            Decoder::Mlp(d) => d.param_ids(),
        }
    }
}

fn bn_ids(bn: &BatchNorm) -> [ParamId; 4] {
    [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
}

/// Label classifier on latent vectors.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub hidden: Dense,
    pub output: Dense,
}

impl Classifier {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &Ctx<'_, T>,
        z: NodeId,
    ) -> Result<NodeId> {
        let h = self.hidden.forward(g, ctx, z)?;
        let h = g.relu(h);
        self.output.forward(g, ctx, h)
    }

    pub fn num_classes(&self) -> usize {
        self.output.out_features
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.hidden.weight,
            self.hidden.bias,
            self.output.weight,
            self.output.bias,
        ]
    }
}

/// Two-way source/target discriminator on latent vectors.
#[derive(Clone, Debug)]
pub struct DomainClassifier {
    pub fc: Dense,
}

impl DomainClassifier {
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ctx: &Ctx<'_, T>,
        z: NodeId,
    ) -> Result<NodeId> {
        self.fc.forward(g, ctx, z)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.fc.weight, self.fc.bias]
    }
}

pub fn build_conv_encoder<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    latent_dim: usize,
) -> Result<Encoder> {
    check_conv_latent(latent_dim)?;
    Ok(Encoder::Conv(ConvEncoder {
        conv1: Conv2d::new(
            store,
            rng,
            &format!("{name}.conv1"),
            1,
            16,
            3,
            ConvGeom::new(1, 1),
        ),
        bn1: BatchNorm::new(store, &format!("{name}.bn1"), 16),
        conv2: Conv2d::new(
            store,
            rng,
            &format!("{name}.conv2"),
            16,
            8,
            3,
            ConvGeom::new(2, 1),
        ),
        bn2: BatchNorm::new(store, &format!("{name}.bn2"), 8),
        fc: Dense::new(store, rng, &format!("{name}.fc"), 32, latent_dim),
    }))
}

pub fn build_conv_decoder<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    latent_dim: usize,
) -> Result<Decoder> {
    check_conv_latent(latent_dim)?;
    Ok(Decoder::Conv(ConvDecoder {
        fc: Dense::new(store, rng, &format!("{name}.fc"), latent_dim, 32),
        up1: ConvTranspose2d::new(
            store,
            rng,
            &format!("{name}.up1"),
            8,
            16,
            3,
            ConvGeom::new(2, 0),
        ),
        bn1: BatchNorm::new(store, &format!("{name}.bn1"), 16),
        up2: ConvTranspose2d::new(
            store,
            rng,
            &format!("{name}.up2"),
            16,
            8,
            5,
            ConvGeom::new(3, 1),
        ),
        bn2: BatchNorm::new(store, &format!("{name}.bn2"), 8),
        up3: ConvTranspose2d::new(
            store,
            rng,
            &format!("{name}.up3"),
            8,
            1,
            2,
            ConvGeom::new(2, 1),
        ),
    }))
}

pub fn build_classifier<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    latent_dim: usize,
    num_classes: usize,
) -> Result<Classifier> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    Ok(Classifier {
        hidden: Dense::new(
            store,
            rng,
            &format!("{name}.fc1"),
            latent_dim,
            CLASSIFIER_HIDDEN,
        ),
        output: Dense::new(
            store,
            rng,
            &format!("{name}.fc2"),
            CLASSIFIER_HIDDEN,
            num_classes,
        ),
    })
}

pub fn build_domain_classifier<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    latent_dim: usize,
) -> DomainClassifier {
    DomainClassifier {
        fc: Dense::new(store, rng, &format!("{name}.fc"), latent_dim, 2),
    }
}

/// Dense encoder/decoder pair for vector inputs.
pub fn build_mlp_pair<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: (&str, &str),
    input_dim: usize,
    hidden: &[usize],
    latent_dim: usize,
) -> Result<(Encoder, Decoder)> {
    if input_dim == 0 || latent_dim == 0 || hidden.contains(&0) {
        return Err(Error::Config("mlp widths must be at least 1".into()));
    }
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(latent_dim);
    let enc = Mlp::new(store, rng, name.0, &widths, false);
    widths.reverse();
    let dec = Mlp::new(store, rng, name.1, &widths, true);
    Ok((Encoder::Mlp(enc), Decoder::Mlp(dec)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArchKind {
    Conv28,
    Mlp { hidden: Vec<usize> },
}

/// Per-domain network family and input geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    /// Per-sample shape, without the batch axis.
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
}

impl ArchitectureSpec {
    pub fn conv28(latent_dim: usize) -> Self {
        Self {
            kind: ArchKind::Conv28,
            input_shape: vec![1, IMAGE_SIDE, IMAGE_SIDE],
            latent_dim,
        }
    }

    pub fn mlp(input_dim: usize, latent_dim: usize) -> Self {
        Self {
            kind: ArchKind::Mlp {
                hidden: vec![MLP_DEFAULT_HIDDEN],
            },
            input_shape: vec![input_dim],
            latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ArchKind::Conv28 => {
                if self.input_shape != [1, IMAGE_SIDE, IMAGE_SIDE] {
                    return Err(Error::Config(format!(
                        "conv28 needs 1x28x28 inputs, got {:?}",
                        self.input_shape
                    )));
                }
                check_conv_latent(self.latent_dim)
            }
            ArchKind::Mlp { .. } => {
                if self.input_shape.len() != 1 {
                    return Err(Error::Config(format!(
                        "mlp needs 1-D inputs, got {:?}",
                        self.input_shape
                    )));
                }
                Ok(())
            }
        }
    }

    fn build<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        enc_name: &str,
        dec_name: &str,
    ) -> Result<(Encoder, Decoder)> {
        self.validate()?;
        match &self.kind {
            ArchKind::Conv28 => Ok((
                build_conv_encoder(store, rng, enc_name, self.latent_dim)?,
                build_conv_decoder(store, rng, dec_name, self.latent_dim)?,
            )),
            ArchKind::Mlp { hidden } => build_mlp_pair(
                store,
                rng,
                (enc_name, dec_name),
                self.input_shape[0],
                hidden,
                self.latent_dim,
            ),
        }
    }
}

/// The six networks of one model, with their parameters.
#[derive(Clone, Debug)]
pub struct ModelBundle<T: Scalar> {
    pub store: ParamStore<T>,
    pub f_source: Encoder,
    pub f_target: Encoder,
    pub d_source: Decoder,
    pub d_target: Decoder,
    pub classifier: Classifier,
    pub domain_classifier: DomainClassifier,
    pub latent_dim: usize,
    pub shared_embedding: bool,
    pub source_arch: ArchitectureSpec,
    pub target_arch: ArchitectureSpec,
}

impl<T: Scalar> ModelBundle<T> {
    /// Initializes every network from `seed`. With `shared_embedding` both
    /// domains use one encoder and one decoder, which requires identical
    /// architectures.
    pub fn new(
        source: &ArchitectureSpec,
        target: &ArchitectureSpec,
        num_classes: usize,
        shared_embedding: bool,
        seed: u64,
    ) -> Result<Self> {
        if source.latent_dim != target.latent_dim {
            return Err(Error::Config(format!(
                "source latent_dim {} differs from target latent_dim {}",
                source.latent_dim, target.latent_dim
            )));
        }
        if shared_embedding && source != target {
            return Err(Error::Config(
                "a shared embedding needs identical source and target architectures".into(),
            ));
        }
        let latent_dim = source.latent_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (f_source, d_source, f_target, d_target) = if shared_embedding {
            let (f, d) = source.build(&mut store, &mut rng, "f_shared", "d_shared")?;
            (f.clone(), d.clone(), f, d)
        } else {
            let (fs, ds) = source.build(&mut store, &mut rng, "f_source", "d_source")?;
            let (ft, dt) = target.build(&mut store, &mut rng, "f_target", "d_target")?;
            (fs, ds, ft, dt)
        };
        let classifier =
            build_classifier(&mut store, &mut rng, "classifier", latent_dim, num_classes)?;
        let domain_classifier = build_domain_classifier(&mut store, &mut rng, "domain", latent_dim);
        Ok(Self {
            store,
            f_source,
            f_target,
            d_source,
            d_target,
            classifier,
            domain_classifier,
            latent_dim,
            shared_embedding,
            source_arch: source.clone(),
            target_arch: target.clone(),
        })
    }

    pub fn encoder(&self, domain: Domain) -> &Encoder {
        match domain {
            Domain::Source => &self.f_source,
            Domain::Target => &self.f_target,
        }
    }

    pub fn decoder(&self, domain: Domain) -> &Decoder {
        match domain {
            Domain::Source => &self.d_source,
            Domain::Target => &self.d_target,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Evaluation-mode latent codes for a batch.
    pub fn embed(&self, domain: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bind = self.store.bind(&mut g, false);
        let mut ctx = Ctx::new(&self.store, &bind, Mode::Eval);
        let xn = g.constant(x.clone());
        let z = self.encoder(domain).forward(&mut g, &mut ctx, xn)?;
        Ok(g.value(z).clone())
    }

    /// Evaluation-mode class logits for a batch.
    pub fn logits(&self, domain: Domain, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bind = self.store.bind(&mut g, false);
        let mut ctx = Ctx::new(&self.store, &bind, Mode::Eval);
        let xn = g.constant(x.clone());
        let z = self.encoder(domain).forward(&mut g, &mut ctx, xn)?;
        let out = self.classifier.forward(&mut g, &ctx, z)?;
        Ok(g.value(out).clone())
    }

    /// Arg-max class predictions, ties to the lowest index.
    pub fn predict(&self, domain: Domain, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(domain, x)?;
        let k = logits.shape()[1];
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}
