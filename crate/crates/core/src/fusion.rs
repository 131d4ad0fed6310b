//! Chernoff-weighted exponential-product fusion of trajectory Gaussians.
//!
//! Two densities are combined as `p* ∝ p_a^{β_a w} p_b^{β_b (1−w)}` where
//! `β` measures each side's information gain over the GP prior and `w` is
//! the Chernoff-optimal exponent. The exponents are normalized to sum to
//! one, so fusing a density with itself returns it unchanged: information
//! that reaches a node twice along different paths is not double counted.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::gp::KernelParams;
use crate::linalg::{Sym2, Vec2};
use crate::network::{MessageKind, Network, TreeTopology};
use crate::scalar::Real;
use crate::trajectory::{gaussian_entropy_2d, TrajectoryGaussian};
use crate::wire::{self, BundleEntry};
use crate::world::{SensorId, TargetId};

/// Lower bound on `β`, so a sensor that learned nothing still gets a
/// vanishing but positive exponent.
pub const BETA_FLOOR: f64 = 1e-6;

const GOLDEN_TOL: f64 = 1e-6;
const GOLDEN_MAX_ITER: usize = 200;

/// Exponents used by one pairwise fusion, after normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights<T> {
    pub beta_a: T,
    pub beta_b: T,
    pub chernoff_w: T,
}

impl<T: Real> FusionWeights<T> {
    /// Scales `(β_a, β_b)` so that `β_a w + β_b (1−w) = 1`.
    pub fn normalized(beta_a: T, beta_b: T, chernoff_w: T) -> Self {
        let c = beta_a * chernoff_w + beta_b * (T::one() - chernoff_w);
        Self {
            beta_a: beta_a / c,
            beta_b: beta_b / c,
            chernoff_w,
        }
    }

    /// Exponent on `p_a`.
    pub fn exponent_a(&self) -> T {
        self.beta_a * self.chernoff_w
    }

    /// Exponent on `p_b`.
    pub fn exponent_b(&self) -> T {
        self.beta_b * (T::one() - self.chernoff_w)
    }

    fn swapped(self) -> Self {
        Self {
            beta_a: self.beta_b,
            beta_b: self.beta_a,
            chernoff_w: T::one() - self.chernoff_w,
        }
    }
}

/// A (possibly fused) trajectory density and the sensors it summarizes.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTrajectory<T> {
    pub pdf: TrajectoryGaussian<T>,
    pub contributors: BTreeSet<SensorId>,
}

impl<T: Real> FusedTrajectory<T> {
    /// A single sensor's local prediction.
    pub fn local(sensor: SensorId, pdf: TrajectoryGaussian<T>) -> Self {
        Self {
            pdf,
            contributors: BTreeSet::from([sensor]),
        }
    }
}

/// A node's local pdf with the prior entropy its `β` is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput<T> {
    pub local: FusedTrajectory<T>,
    /// Entropy of the node's GP prior over the horizon; see [`prior_entropy`].
    pub prior_entropy: T,
}

/// Which densities the Chernoff weight is searched on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeightSearch {
    /// Search on `p^β`, covariances `Σ/β`.
    #[default]
    BetaScaled,
    /// Search on the unscaled densities.
    Unscaled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionOptions {
    pub weight_search: WeightSearch,
}

/// Entropy of the GP prior trajectory: `horizon` blocks of `σ_s²·dt²·I`.
pub fn prior_entropy<T: Real>(params: &KernelParams<T>, horizon: usize, dt: T) -> T {
    let block = Sym2::isotropic(params.signal_var() * dt * dt);
    gaussian_entropy_2d(&block) * T::from_usize(horizon).expect("horizon fits scalar")
}

/// `max(δ, H_prior − H_posterior)`.
pub fn beta_weight<T: Real>(prior_entropy: T, posterior: &TrajectoryGaussian<T>) -> T {
    (prior_entropy - posterior.entropy()).max(T::lit(BETA_FLOOR))
}

/// Chernoff α-divergence `−log ∫ p_a^w p_b^{1−w}`, summed over blocks.
///
/// Per block, with `M = (1−w)Σ_a + wΣ_b` and `d = μ_a − μ_b`:
/// `½ log(|M| / (|Σ_a|^{1−w} |Σ_b|^w)) + w(1−w)/2 · dᵀM⁻¹d`.
/// Nonnegative, concave in `w`, and zero at both endpoints.
pub fn chernoff_divergence<T: Real>(a: &TrajectoryGaussian<T>, b: &TrajectoryGaussian<T>, w: T) -> T {
    let half = T::lit(0.5);
    let v = T::one() - w;
    a.blocks()
        .zip(b.blocks())
        .zip(a.mean().iter().zip(b.mean()))
        .map(|((sa, sb), (ma, mb))| {
            let mixed = sa.scale(v) + sb.scale(w);
            let d = *ma - *mb;
            let logdet = mixed.det().ln() - v * sa.det().ln() - w * sb.det().ln();
            let quad = match mixed.inverse() {
                Ok(inv) => inv.quad_form(d),
                Err(_) => T::zero(),
            };
            half * logdet + half * w * v * quad
        })
        .sum()
}

/// Exponent `w* ∈ [0,1]` on `p_a` minimizing `∫ p_a^w p_b^{1−w}`, i.e.
/// maximizing [`chernoff_divergence`]. Bounded golden-section search;
/// identical inputs give exactly `0.5`.
///
/// Panics if the horizons differ; [`fuse_pair`] checks this first.
pub fn chernoff_weight<T: Real>(a: &TrajectoryGaussian<T>, b: &TrajectoryGaussian<T>) -> T {
    assert_eq!(a.horizon(), b.horizon(), "horizon mismatch");
    match compare_pdfs(a, b) {
        Ordering::Equal => T::lit(0.5),
        Ordering::Less => golden_section(a, b),
        // searching in a fixed orientation makes w(a,b) + w(b,a) = 1 exact
        Ordering::Greater => T::one() - golden_section(b, a),
    }
}

fn golden_section<T: Real>(a: &TrajectoryGaussian<T>, b: &TrajectoryGaussian<T>) -> T {
    let f = |w: T| -chernoff_divergence(a, b, w);
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let tol = T::lit(GOLDEN_TOL);
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_MAX_ITER {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let w = (lo + hi) * T::lit(0.5);
    // the divergence is zero at both ends; never do worse than an endpoint
    if f(w) > T::zero() {
        T::lit(0.5)
    } else {
        w
    }
}

/// Total order on pdfs by mean then blocks, used to fix argument order.
fn compare_pdfs<T: Real>(a: &TrajectoryGaussian<T>, b: &TrajectoryGaussian<T>) -> Ordering {
    let key = |g: &TrajectoryGaussian<T>| -> Vec<f64> {
        g.mean()
            .iter()
            .flat_map(|m| [m.x.as_f64(), m.y.as_f64()])
            .chain(g.blocks().flat_map(|s| [s.xx.as_f64(), s.xy.as_f64(), s.yy.as_f64()]))
            .collect()
    };
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| ka.len().cmp(&kb.len()))
}

/// Fuses with default options.
pub fn fuse_pair<T: Real>(a: &FusedTrajectory<T>, b: &FusedTrajectory<T>, beta_a: T, beta_b: T) -> Result<FusedTrajectory<T>> {
    fuse_pair_with(a, b, beta_a, beta_b, FusionOptions::default()).map(|(f, _)| f)
}

/// Pairwise fusion; also returns the normalized exponents that were used.
///
/// Inputs are put in a canonical order before any arithmetic, so swapping
/// `(a, b)` together with `(β_a, β_b)` gives bit-identical output.
pub fn fuse_pair_with<T: Real>(
    a: &FusedTrajectory<T>,
    b: &FusedTrajectory<T>,
    beta_a: T,
    beta_b: T,
    opts: FusionOptions,
) -> Result<(FusedTrajectory<T>, FusionWeights<T>)> {
    a.pdf.check_compatible(&b.pdf)?;
    for beta in [beta_a, beta_b] {
        if !(beta.is_finite() && beta > T::zero()) {
            return Err(Error::InvalidParameter(format!("fusion weight must be positive, got {beta}")));
        }
    }
    let order = a
        .contributors
        .cmp(&b.contributors)
        .then_with(|| compare_pdfs(&a.pdf, &b.pdf))
        .then_with(|| beta_a.as_f64().total_cmp(&beta_b.as_f64()));
    if order == Ordering::Greater {
        let (fused, weights) = fuse_canonical(b, a, beta_b, beta_a, opts)?;
        return Ok((fused, weights.swapped()));
    }
    fuse_canonical(a, b, beta_a, beta_b, opts)
}

fn fuse_canonical<T: Real>(
    a: &FusedTrajectory<T>,
    b: &FusedTrajectory<T>,
    beta_a: T,
    beta_b: T,
    opts: FusionOptions,
) -> Result<(FusedTrajectory<T>, FusionWeights<T>)> {
    let w = match opts.weight_search {
        WeightSearch::BetaScaled => chernoff_weight(&a.pdf.powered(beta_a), &b.pdf.powered(beta_b)),
        WeightSearch::Unscaled => chernoff_weight(&a.pdf, &b.pdf),
    };
    let weights = FusionWeights::normalized(beta_a, beta_b, w);
    let pdf = apply_weights(&a.pdf, &b.pdf, &weights)?;
    Ok((
        FusedTrajectory {
            pdf,
            contributors: a.contributors.union(&b.contributors).copied().collect(),
        },
        weights,
    ))
}

/// Moments of `p_a^{e_a} p_b^{e_b}` (normalized), block by block:
/// `Σ* = (e_a Σ_a⁻¹ + e_b Σ_b⁻¹)⁻¹`, `μ* = Σ*(e_a Σ_a⁻¹ μ_a + e_b Σ_b⁻¹ μ_b)`.
pub fn apply_weights<T: Real>(
    a: &TrajectoryGaussian<T>,
    b: &TrajectoryGaussian<T>,
    weights: &FusionWeights<T>,
) -> Result<TrajectoryGaussian<T>> {
    a.check_compatible(b)?;
    let (ea, eb) = (weights.exponent_a(), weights.exponent_b());
    let mut mean = Vec::with_capacity(a.horizon());
    let mut blocks = Vec::with_capacity(a.horizon());
    for i in 0..a.horizon() {
        let pa = a.block(i).inverse()?;
        let pb = b.block(i).inverse()?;
        let cov = (pa.scale(ea) + pb.scale(eb)).inverse()?;
        let info: Vec2<T> = pa.mul_vec(a.mean()[i]) * ea + pb.mul_vec(b.mean()[i]) * eb;
        mean.push(cov.mul_vec(info));
        blocks.push(cov);
    }
    TrajectoryGaussian::new(a.start_step(), mean, blocks)
}

/// Fuses every sensor's local pdf up the tree (children in ascending id,
/// each fused into its parent's running estimate) and returns the root's
/// result, which the broadcast phase hands to every sensor unchanged.
///
/// At each node, both sides' `β` are measured against that node's prior.
pub fn tree_fuse<T: Real>(locals: &BTreeMap<SensorId, FusionInput<T>>, tree: &TreeTopology) -> Result<FusedTrajectory<T>> {
    tree_fuse_with(locals, tree, FusionOptions::default())
}

pub fn tree_fuse_with<T: Real>(
    locals: &BTreeMap<SensorId, FusionInput<T>>,
    tree: &TreeTopology,
    opts: FusionOptions,
) -> Result<FusedTrajectory<T>> {
    check_coverage(locals.keys().copied(), tree)?;
    fuse_subtree(tree.root(), locals, tree, opts)
}

fn check_coverage(ids: impl Iterator<Item = SensorId>, tree: &TreeTopology) -> Result<()> {
    let ids: BTreeSet<_> = ids.collect();
    let nodes: BTreeSet<_> = tree.nodes().collect();
    if ids != nodes {
        return Err(Error::Protocol(format!(
            "local pdfs for sensors {ids:?} but topology spans {nodes:?}"
        )));
    }
    Ok(())
}

fn fuse_subtree<T: Real>(
    node: SensorId,
    locals: &BTreeMap<SensorId, FusionInput<T>>,
    tree: &TreeTopology,
    opts: FusionOptions,
) -> Result<FusedTrajectory<T>> {
    let own = &locals[&node];
    let mut acc = own.local.clone();
    for &child in tree.children(node) {
        let sub = fuse_subtree(child, locals, tree, opts)?;
        acc = fuse_at(&acc, &sub, own.prior_entropy, opts)?;
    }
    Ok(acc)
}

fn fuse_at<T: Real>(acc: &FusedTrajectory<T>, incoming: &FusedTrajectory<T>, prior: T, opts: FusionOptions) -> Result<FusedTrajectory<T>> {
    let beta_acc = beta_weight(prior, &acc.pdf);
    let beta_in = beta_weight(prior, &incoming.pdf);
    fuse_pair_with(acc, incoming, beta_acc, beta_in, opts).map(|(f, _)| f)
}

/// Per-sensor, per-target local pdfs for one fusion round.
pub type LocalBundles<T> = BTreeMap<SensorId, BTreeMap<TargetId, FusionInput<T>>>;

/// [`tree_fuse`] for all targets at once, run as a message protocol.
///
/// Every tree edge carries one encoded bundle upward and one downward;
/// receivers work from the decoded bytes. Returns what each sensor holds
/// after the broadcast.
pub fn tree_fuse_network<T: Real>(
    locals: &LocalBundles<T>,
    network: &mut Network,
    round: u32,
    step: u32,
    opts: FusionOptions,
) -> Result<BTreeMap<SensorId, BTreeMap<TargetId, FusedTrajectory<T>>>> {
    let tree = network.topology().clone();
    check_coverage(locals.keys().copied(), &tree)?;
    let targets: Option<BTreeSet<TargetId>> = locals.values().next().map(|m| m.keys().copied().collect());
    let targets = targets.unwrap_or_default();
    if locals.values().any(|m| m.keys().copied().collect::<BTreeSet<_>>() != targets) {
        return Err(Error::Protocol("sensors disagree on the set of tracked targets".into()));
    }
    let root_view = upward(tree.root(), locals, &tree, network, round, step, opts)?;

    let mut held = BTreeMap::new();
    let mut stack = vec![(tree.root(), root_view)];
    while let Some((node, view)) = stack.pop() {
        for &child in tree.children(node) {
            let bytes = encode_bundle(&view, round, step)?;
            network.send(round, node, child, MessageKind::FusedPdf, &bytes)?;
            stack.push((child, decode_bundle(&bytes)?));
        }
        held.insert(node, view);
    }
    Ok(held)
}

fn upward<T: Real>(
    node: SensorId,
    locals: &LocalBundles<T>,
    tree: &TreeTopology,
    network: &mut Network,
    round: u32,
    step: u32,
    opts: FusionOptions,
) -> Result<BTreeMap<TargetId, FusedTrajectory<T>>> {
    let own = &locals[&node];
    let mut acc: BTreeMap<TargetId, FusedTrajectory<T>> = own.iter().map(|(&t, input)| (t, input.local.clone())).collect();
    for &child in tree.children(node) {
        let sub = upward(child, locals, tree, network, round, step, opts)?;
        let bytes = encode_bundle(&sub, round, step)?;
        network.send(round, child, node, MessageKind::LocalPdf, &bytes)?;
        let received = decode_bundle(&bytes)?;
        for (target, incoming) in received {
            let slot = acc
                .get_mut(&target)
                .ok_or_else(|| Error::Protocol(format!("unexpected target {target} from sensor {child}")))?;
            *slot = fuse_at(slot, &incoming, own[&target].prior_entropy, opts)?;
        }
    }
    Ok(acc)
}

fn encode_bundle<T: Real>(view: &BTreeMap<TargetId, FusedTrajectory<T>>, round: u32, step: u32) -> Result<Vec<u8>> {
    let entries: Vec<_> = view
        .iter()
        .map(|(&target_id, f)| BundleEntry {
            target_id,
            contributors: f.contributors.clone(),
            pdf: f.pdf.clone(),
        })
        .collect();
    wire::encode_trajectory_bundle(round, step, &entries)
}

fn decode_bundle<T: Real>(bytes: &[u8]) -> Result<BTreeMap<TargetId, FusedTrajectory<T>>> {
    let (_, entries) = wire::decode_trajectory_bundle::<T>(bytes)?;
    Ok(entries
        .into_iter()
        .map(|e| {
            (
                e.target_id,
                FusedTrajectory {
                    pdf: e.pdf,
                    contributors: e.contributors,
                },
            )
        })
        .collect())
}
