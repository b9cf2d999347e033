//! Named parameter blocks, differentiable objectives over them, and a
//! central-difference checker for the analytic gradients.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graphdeform::{GraphGradient, GraphParams};
use crate::losses::{arap_kink_nodes, DeformObjective, PoseObjective, SilhouetteFrame};

/// Below this magnitude the relative error rule switches to absolute.
pub const ABSOLUTE_BELOW: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub values: Vec<f64>,
    pub active: bool,
}

/// Ordered, uniquely named parameter vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamBlocks {
    pub blocks: Vec<Block>,
}

impl ParamBlocks {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.push(name, values)?;
        Ok(self)
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if self.index(name).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate parameter block '{name}'")));
        }
        self.blocks.push(Block {
            name: name.to_string(),
            values,
            active: true,
        });
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.index(name)
            .map(|i| self.blocks[i].values.as_slice())
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        let i = self.index(name).ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        Ok(&mut self.blocks[i].values)
    }

    pub fn set_active(&mut self, name: &str, active: bool) -> Result<()> {
        let i = self.index(name).ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        self.blocks[i].active = active;
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    /// Zero vectors shaped like the blocks.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| vec![0.0; b.values.len()]).collect()
    }
}

pub fn flatten(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|x| x.iter().copied()).collect()
}

pub fn unflatten(v: &[f64]) -> Vec<Vector3<f64>> {
    v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

/// Scalar function of a set of parameter blocks. Gradients are returned in
/// block order; inactive blocks get zero vectors.
pub trait Objective {
    fn value(&self, blocks: &ParamBlocks) -> Result<f64>;

    fn value_and_gradient(&self, blocks: &ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)>;

    /// False when a central difference of half-width `step` on coordinate
    /// `index` of block `block` may straddle a kink of the objective.
    fn smooth_at(&self, _blocks: &ParamBlocks, _block: usize, _index: usize, _step: f64) -> bool {
        true
    }
}

/// Gradient of `objective` at `blocks`.
pub fn gradient(objective: &dyn Objective, blocks: &ParamBlocks) -> Result<Vec<Vec<f64>>> {
    let (_, mut g) = objective.value_and_gradient(blocks)?;
    for (b, gb) in blocks.blocks.iter().zip(&mut g) {
        if !b.active {
            gb.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(g)
}

type ValueFn<'a> = Box<dyn Fn(&ParamBlocks) -> Result<f64> + Sync + 'a>;
type GradFn<'a> = Box<dyn Fn(&ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> + Sync + 'a>;

/// Objective from closures. Built with [`FnObjective::value_only`] it
/// refuses to differentiate.
pub struct FnObjective<'a> {
    name: String,
    value: ValueFn<'a>,
    grad: Option<GradFn<'a>>,
}

impl<'a> FnObjective<'a> {
    pub fn new(
        name: &str,
        value: impl Fn(&ParamBlocks) -> Result<f64> + Sync + 'a,
        grad: impl Fn(&ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> + Sync + 'a,
    ) -> Self {
        Self {
            name: name.to_string(),
            value: Box::new(value),
            grad: Some(Box::new(grad)),
        }
    }

    pub fn value_only(name: &str, value: impl Fn(&ParamBlocks) -> Result<f64> + Sync + 'a) -> Self {
        Self {
            name: name.to_string(),
            value: Box::new(value),
            grad: None,
        }
    }
}

impl Objective for FnObjective<'_> {
    fn value(&self, blocks: &ParamBlocks) -> Result<f64> {
        (self.value)(blocks)
    }

    fn value_and_gradient(&self, blocks: &ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> {
        match &self.grad {
            Some(g) => g(blocks),
            None => Err(Error::NotDifferentiable(self.name.clone())),
        }
    }
}

/// `sum_i w_i * L_i`.
#[derive(Default)]
pub struct WeightedSum<'a> {
    pub terms: Vec<(f64, Box<dyn Objective + 'a>)>,
}

impl<'a> WeightedSum<'a> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn term(mut self, weight: f64, objective: impl Objective + 'a) -> Self {
        self.terms.push((weight, Box::new(objective)));
        self
    }
}

impl Objective for WeightedSum<'_> {
    fn smooth_at(&self, blocks: &ParamBlocks, block: usize, index: usize, step: f64) -> bool {
        self.terms.iter().all(|(_, t)| t.smooth_at(blocks, block, index, step))
    }

    fn value(&self, blocks: &ParamBlocks) -> Result<f64> {
        let mut total = 0.0;
        for (w, t) in &self.terms {
            total += w * t.value(blocks)?;
        }
        Ok(total)
    }

    fn value_and_gradient(&self, blocks: &ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut total = 0.0;
        let mut grad = blocks.zeros_like();
        for (w, t) in &self.terms {
            let (v, g) = t.value_and_gradient(blocks)?;
            total += w * v;
            for (acc, gb) in grad.iter_mut().zip(&g) {
                for (a, x) in acc.iter_mut().zip(gb) {
                    *a += w * x;
                }
            }
        }
        Ok((total, grad))
    }
}

/// Pose objective over blocks `theta` and `alpha`.
impl Objective for PoseObjective<'_> {
    fn value(&self, blocks: &ParamBlocks) -> Result<f64> {
        Ok(self.evaluate(blocks.get("theta")?, &alpha_of(blocks)?)?.total)
    }

    fn value_and_gradient(&self, blocks: &ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> {
        let e = self.evaluate(blocks.get("theta")?, &alpha_of(blocks)?)?;
        let grads = blocks
            .blocks
            .iter()
            .map(|b| match b.name.as_str() {
                "theta" => e.grad_theta.clone(),
                "alpha" => e.grad_alpha.as_slice().to_vec(),
                _ => vec![0.0; b.values.len()],
            })
            .collect();
        Ok((e.total, grads))
    }

    /// The limit penalty has a kink at each joint limit.
    fn smooth_at(&self, blocks: &ParamBlocks, block: usize, index: usize, step: f64) -> bool {
        if blocks.blocks[block].name != "theta" {
            return true;
        }
        let x = blocks.blocks[block].values[index];
        let [lo, hi] = self.skeleton.limits[index];
        (x - lo).abs() > 2.0 * step && (x - hi).abs() > 2.0 * step
    }
}

fn alpha_of(blocks: &ParamBlocks) -> Result<Vector3<f64>> {
    let a = blocks.get("alpha")?;
    if a.len() != 3 {
        return Err(Error::DimensionMismatch {
            what: "alpha",
            expected: 3,
            got: a.len(),
        });
    }
    Ok(Vector3::new(a[0], a[1], a[2]))
}

pub fn pose_blocks(theta: &[f64], alpha: &Vector3<f64>) -> ParamBlocks {
    ParamBlocks {
        blocks: vec![
            Block {
                name: "theta".into(),
                values: theta.to_vec(),
                active: true,
            },
            Block {
                name: "alpha".into(),
                values: alpha.as_slice().to_vec(),
                active: true,
            },
        ],
    }
}

pub fn graph_blocks(params: &GraphParams) -> ParamBlocks {
    ParamBlocks {
        blocks: vec![
            Block {
                name: "A".into(),
                values: flatten(&params.angles),
                active: true,
            },
            Block {
                name: "T".into(),
                values: flatten(&params.translations),
                active: true,
            },
        ],
    }
}

pub fn graph_params_of(blocks: &ParamBlocks) -> Result<GraphParams> {
    Ok(GraphParams {
        angles: unflatten(blocks.get("A")?),
        translations: unflatten(blocks.get("T")?),
    })
}

fn graph_gradient_blocks(blocks: &ParamBlocks, g: &GraphGradient) -> Vec<Vec<f64>> {
    blocks
        .blocks
        .iter()
        .map(|b| match b.name.as_str() {
            "A" => flatten(&g.angles),
            "T" => flatten(&g.translations),
            _ => vec![0.0; b.values.len()],
        })
        .collect()
}

/// Deformation objective with its silhouette frame held fixed.
pub struct FrozenDeform<'o, 'a> {
    pub objective: &'o DeformObjective<'a>,
    pub frame: SilhouetteFrame,
}

impl<'o, 'a> FrozenDeform<'o, 'a> {
    /// Freezes boundary sets and gates at `params`.
    pub fn at(objective: &'o DeformObjective<'a>, params: &GraphParams) -> Self {
        Self {
            frame: objective.freeze(params),
            objective,
        }
    }
}

impl Objective for FrozenDeform<'_, '_> {
    fn value(&self, blocks: &ParamBlocks) -> Result<f64> {
        Ok(self.objective.evaluate(&graph_params_of(blocks)?, &self.frame)?.total)
    }

    fn value_and_gradient(&self, blocks: &ParamBlocks) -> Result<(f64, Vec<Vec<f64>>)> {
        let e = self.objective.evaluate(&graph_params_of(blocks)?, &self.frame)?;
        Ok((e.total, graph_gradient_blocks(blocks, &e.grad)))
    }

    /// The smoothed L1 of the ARAP term is a kink at the FD scale.
    fn smooth_at(&self, blocks: &ParamBlocks, _block: usize, index: usize, step: f64) -> bool {
        if self.objective.weights.w_arap == 0.0 {
            return true;
        }
        let Ok(params) = graph_params_of(blocks) else { return true };
        !arap_kink_nodes(&self.objective.character.graph, &params, 2.0 * step)[index / 3]
    }
}

/// Worst disagreement between analytic and central-difference derivatives
/// within one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_error: f64,
    /// Coordinate of the worst error.
    pub worst: usize,
    /// True when the worst error was measured absolutely (both derivatives
    /// below [`ABSOLUTE_BELOW`]).
    pub absolute: bool,
    pub checked: usize,
    /// Coordinates left out because their stencil crosses a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    pub seed: u64,
    /// Check at most this many coordinates per block, chosen by `seed`.
    pub max_coords: Option<usize>,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            seed: 0,
            max_coords: None,
        }
    }
}

/// Error measure used by [`fd_check`].
pub fn derivative_error(analytic: f64, numeric: f64) -> (f64, bool) {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABSOLUTE_BELOW {
        ((analytic - numeric).abs(), true)
    } else {
        ((analytic - numeric).abs() / scale, false)
    }
}

/// Compares the analytic gradient of every active block with central
/// differences of `objective.value`.
pub fn fd_check(objective: &dyn Objective, blocks: &ParamBlocks, options: FdOptions) -> Result<Vec<BlockError>> {
    if !(options.step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let analytic = gradient(objective, blocks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut probe = blocks.clone();
    let mut out = Vec::new();
    for (bi, block) in blocks.blocks.iter().enumerate() {
        if !block.active {
            continue;
        }
        let n = block.values.len();
        let coords: Vec<usize> = match options.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut worst = BlockError {
            name: block.name.clone(),
            max_error: 0.0,
            worst: 0,
            absolute: false,
            checked: 0,
            skipped: 0,
        };
        for &i in &coords {
            if !objective.smooth_at(blocks, bi, i, options.step) {
                worst.skipped += 1;
                continue;
            }
            worst.checked += 1;
            let x = block.values[i];
            probe.blocks[bi].values[i] = x + options.step;
            let plus = objective.value(&probe)?;
            probe.blocks[bi].values[i] = x - options.step;
            let minus = objective.value(&probe)?;
            probe.blocks[bi].values[i] = x;
            let numeric = (plus - minus) / (2.0 * options.step);
            let (err, absolute) = derivative_error(analytic[bi][i], numeric);
            if err > worst.max_error {
                worst.max_error = err;
                worst.worst = i;
                worst.absolute = absolute;
            }
        }
        out.push(worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camproj::{distance_transform, rasterize_mask, Camera, Intrinsics};
    use crate::graphdeform::mesh_state;
    use crate::kinematics::{forward_landmarks, node_transforms};
    use crate::losses::{limit_loss, world_landmarks, Keypoint2D, LossWeights};
    use crate::testutil::test_character;
    use nalgebra::Vector2;
    use rand::Rng;

    fn quadratic() -> FnObjective<'static> {
        FnObjective::new(
            "quadratic",
            |b| {
                let x = b.get("x")?;
                Ok(x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v + v).sum())
            },
            |b| {
                let x = b.get("x")?;
                let v = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v + v).sum();
                let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v + 1.0).collect();
                Ok((v, vec![g]))
            },
        )
    }

    #[test]
    fn quadratic_is_exact() {
        let blocks = ParamBlocks::new().with("x", vec![0.3, -1.2, 2.0]).unwrap();
        let report = fd_check(&quadratic(), &blocks, FdOptions::default()).unwrap();
        assert!(report[0].max_error < 1e-10, "{report:?}");
    }

    #[test]
    fn limit_gradient_component() {
        let limits = vec![[-1.0, 1.0]];
        let obj = FnObjective::new(
            "limit",
            |b| Ok(limit_loss(b.get("theta")?, &[[-1.0, 1.0]]).0),
            move |b| {
                let (v, g) = limit_loss(b.get("theta")?, &limits);
                Ok((v, vec![g]))
            },
        );
        let blocks = ParamBlocks::new().with("theta", vec![1.1]).unwrap();
        let g = gradient(&obj, &blocks).unwrap();
        assert!((g[0][0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_and_zero_gradient_points() {
        let obj = FnObjective::new("c", |_| Ok(3.0), |b| Ok((3.0, b.zeros_like())));
        let blocks = ParamBlocks::new().with("x", vec![1.0, 2.0]).unwrap();
        assert_eq!(gradient(&obj, &blocks).unwrap(), vec![vec![0.0, 0.0]]);
        let report = fd_check(&obj, &blocks, FdOptions::default()).unwrap();
        assert!(report[0].max_error < 1e-8);
        // minimum of the quadratic: gradient vanishes, absolute rule applies
        let at_min = ParamBlocks::new().with("x", vec![-0.5, -0.25]).unwrap();
        let report = fd_check(&quadratic(), &at_min, FdOptions::default()).unwrap();
        assert!(report[0].max_error < 1e-8);
    }

    #[test]
    fn value_only_terms_refuse_gradients() {
        let obj = FnObjective::value_only("opaque", |_| Ok(1.0));
        let blocks = ParamBlocks::new().with("x", vec![1.0]).unwrap();
        assert!(matches!(gradient(&obj, &blocks), Err(Error::NotDifferentiable(_))));
        assert!(matches!(blocks.get("y"), Err(Error::UnknownBlock(_))));
        assert!(ParamBlocks::new().with("x", vec![]).unwrap().with("x", vec![]).is_err());
    }

    #[test]
    fn weighted_sum_is_linear() {
        let sin = FnObjective::new(
            "sin",
            |b| Ok(b.get("x")?.iter().map(|v| v.sin()).sum()),
            |b| {
                let x = b.get("x")?;
                Ok((x.iter().map(|v| v.sin()).sum(), vec![x.iter().map(|v| v.cos()).collect()]))
            },
        );
        let blocks = ParamBlocks::new().with("x", vec![0.1, 0.7, -0.4]).unwrap();
        let ga = gradient(&quadratic(), &blocks).unwrap();
        let gb = gradient(&sin, &blocks).unwrap();
        let sum = WeightedSum::new().term(2.5, quadratic()).term(-0.75, sin);
        let g = gradient(&sum, &blocks).unwrap();
        for i in 0..3 {
            assert!((g[0][i] - (2.5 * ga[0][i] - 0.75 * gb[0][i])).abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_blocks_get_zero_gradient() {
        let mut blocks = ParamBlocks::new().with("x", vec![1.0]).unwrap();
        blocks.set_active("x", false).unwrap();
        assert_eq!(gradient(&quadratic(), &blocks).unwrap(), vec![vec![0.0]]);
        assert!(fd_check(&quadratic(), &blocks, FdOptions::default()).unwrap().is_empty());
    }

    fn ring(n: usize) -> Vec<Camera> {
        (0..n)
            .map(|c| {
                let a = c as f64 * std::f64::consts::TAU / n as f64;
                Camera::look_at(
                    Vector3::new(3.5 * a.sin(), -0.4, -3.5 * a.cos()),
                    Vector3::zeros(),
                    Vector3::y(),
                    Intrinsics {
                        fx: 300.0,
                        fy: 300.0,
                        cx: 100.0,
                        cy: 100.0,
                    },
                    200,
                    200,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn pose_objective_passes_fd_check() {
        let ch = test_character();
        let sk = &ch.rig.skeleton;
        let cams = ring(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth: Vec<f64> = sk.limits.iter().map(|l| rng.gen_range(l[0]..=l[1]) * 0.6).collect();
        let local = forward_landmarks(sk, &truth, &Vector3::zeros()).unwrap();
        let world = world_landmarks(&local, &cams[0], &Vector3::zeros());
        let dets: Vec<Vec<Keypoint2D>> = cams
            .iter()
            .map(|c| {
                world
                    .iter()
                    .map(|x| {
                        let p = c.project(x).unwrap() + Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                        Keypoint2D::new(p, rng.gen_range(0.3..1.0))
                    })
                    .collect()
            })
            .collect();
        let mut obj = PoseObjective::new(
            sk,
            cams.iter().collect(),
            &cams[0],
            dets.iter().map(|d| d.as_slice()).collect(),
            LossWeights::default(),
            true,
        )
        .unwrap();
        obj.set_progress(0.2);
        // limits violated on purpose for some coordinates
        let theta: Vec<f64> = truth.iter().map(|t| t + rng.gen_range(-0.5..0.5)).collect();
        let blocks = pose_blocks(&theta, &Vector3::new(0.1, -0.2, 0.05));
        for e in fd_check(&obj, &blocks, FdOptions::default()).unwrap() {
            assert!(e.max_error < 1e-4, "{e:?}");
        }
    }

    #[test]
    fn deform_objective_passes_fd_check() {
        let ch = test_character();
        let sk = &ch.rig.skeleton;
        let cams = ring(4);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let theta: Vec<f64> = sk.limits.iter().map(|l| rng.gen_range(l[0]..=l[1]) * 0.3).collect();
        let alpha = Vector3::zeros();
        let t = Vector3::new(0.05, 0.0, -0.1);
        let nt = node_transforms(ch, &theta, &alpha).unwrap();
        let k = ch.node_count();
        let mut v = |s: f64| -> Vec<Vector3<f64>> {
            (0..k)
                .map(|_| Vector3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s)))
                .collect()
        };
        let truth = GraphParams {
            angles: v(0.1),
            translations: v(0.03),
        };
        let state = mesh_state(ch, &truth, &nt, &cams[0], &t).unwrap();
        let sils: Vec<_> = cams
            .iter()
            .map(|c| distance_transform(&rasterize_mask(c, &state.world, &ch.rig.mesh.faces)).unwrap())
            .collect();
        let marks = crate::graphdeform::deform_landmarks(ch, &truth, &nt, &cams[0], &t).unwrap();
        let dets: Vec<Vec<Keypoint2D>> = cams
            .iter()
            .map(|c| marks.iter().map(|x| Keypoint2D::new(c.project(x).unwrap(), 1.0)).collect())
            .collect();
        let obj = DeformObjective::new(
            ch,
            cams.iter().collect(),
            &cams[0],
            sils.iter().collect(),
            dets.iter().map(|d| d.as_slice()).collect(),
            nt,
            t,
            LossWeights::default(),
        )
        .unwrap();
        let params = GraphParams {
            angles: v(0.15),
            translations: v(0.04),
        };
        let frozen = FrozenDeform::at(&obj, &params);
        assert!(frozen.frame.active_count() > 0);
        let report = fd_check(&frozen, &graph_blocks(&params), FdOptions::default()).unwrap();
        for e in report {
            assert!(e.max_error < 1e-4, "{e:?}");
        }
    }
}
