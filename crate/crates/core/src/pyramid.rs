//! Scale schedules and residual pyramid arithmetic.
//!
//! A generation run walks an ordered list of token-map sizes. The running
//! reconstruction at step k is the upsampled previous reconstruction plus a
//! per-scale residual; unrolling that recurrence gives an equivalent
//! cumulative sum of upsampled residuals. The two forms agree exactly only
//! when the resize family composes across scales (nearest neighbor on nested
//! integer-factor grids); [`equivalence_gap`] reports the difference instead
//! of pretending it is zero.

use crate::error::{FastVarError, Result};
use crate::numkern::{self, ResizeMode, TokenMap};

/// Ordered list of (h, w) scale sizes plus the split into structure and
/// texture stages and the per-texture-step pruning ratios.
///
/// Steps are numbered 1..=K to match the decode loop's language. The last
/// `n_texture` steps form the texture stage; only those may prune. A ratio of
/// exactly 1.0 means the step is skipped outright, and once a step is skipped
/// every later step must be skipped too.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule {
    sizes: Vec<(usize, usize)>,
    n_texture: usize,
    prune_ratios: Vec<f32>,
    cache_step: usize,
    mode: ResizeMode,
}

impl ScaleSchedule {
    /// Validates and builds a schedule. `cache_step` defaults to K - N, the
    /// last structure step. `n_texture` may be 0 for schedules that never
    /// prune (this also admits single-step schedules).
    pub fn new(
        sizes: Vec<(usize, usize)>,
        n_texture: usize,
        prune_ratios: Vec<f32>,
        cache_step: Option<usize>,
        mode: ResizeMode,
    ) -> Result<Self> {
        if sizes.is_empty() {
            return Err(FastVarError::InvalidArgument("schedule has no sizes".into()));
        }
        for &(h, w) in &sizes {
            if h == 0 || w == 0 {
                return Err(FastVarError::InvalidArgument(format!(
                    "schedule size {h}x{w} has a zero dim"
                )));
            }
        }
        for pair in sizes.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.0 * a.1 >= b.0 * b.1 {
                return Err(FastVarError::InvalidArgument(format!(
                    "sizes must strictly increase in token count, got {}x{} then {}x{}",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
        let k = sizes.len();
        if n_texture >= k {
            return Err(FastVarError::InvalidArgument(format!(
                "texture stage length {n_texture} must be < step count {k}"
            )));
        }
        if prune_ratios.len() != n_texture {
            return Err(FastVarError::InvalidArgument(format!(
                "expected {n_texture} pruning ratios, got {}",
                prune_ratios.len()
            )));
        }
        let mut skipping = false;
        for (j, &r) in prune_ratios.iter().enumerate() {
            if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                return Err(FastVarError::InvalidArgument(format!(
                    "pruning ratio {r} at texture position {j} outside [0, 1]"
                )));
            }
            if skipping && r != 1.0 {
                return Err(FastVarError::InvalidArgument(format!(
                    "ratio {r} at texture position {j} follows a skipped step; \
                     skipped steps cannot be followed by forwarded steps"
                )));
            }
            if r == 1.0 {
                skipping = true;
            }
        }
        let structure_end = k - n_texture;
        let cache_step = cache_step.unwrap_or(structure_end);
        if cache_step == 0 || cache_step > structure_end {
            return Err(FastVarError::InvalidArgument(format!(
                "cache step {cache_step} outside [1, {structure_end}]"
            )));
        }
        Ok(ScaleSchedule {
            sizes,
            n_texture,
            prune_ratios,
            cache_step,
            mode,
        })
    }

    /// Step count K.
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[(usize, usize)] {
        &self.sizes
    }

    /// Size of step `k` (1-based).
    pub fn size(&self, k: usize) -> (usize, usize) {
        self.sizes[k - 1]
    }

    /// Token count h*w of step `k` (1-based).
    pub fn tokens(&self, k: usize) -> usize {
        let (h, w) = self.size(k);
        h * w
    }

    pub fn n_texture(&self) -> usize {
        self.n_texture
    }

    /// Last structure step K - N; also the default caching step.
    pub fn structure_end(&self) -> usize {
        self.sizes.len() - self.n_texture
    }

    pub fn cache_step(&self) -> usize {
        self.cache_step
    }

    pub fn mode(&self) -> ResizeMode {
        self.mode
    }

    pub fn prune_ratios(&self) -> &[f32] {
        &self.prune_ratios
    }

    /// Pruning ratio applied at step `k` (1-based); structure steps are 0.
    pub fn ratio_for_step(&self, k: usize) -> f32 {
        if k <= self.structure_end() {
            0.0
        } else {
            self.prune_ratios[k - self.structure_end() - 1]
        }
    }

    pub fn is_texture_step(&self, k: usize) -> bool {
        k > self.structure_end()
    }

    /// Whether step `k` is skipped entirely (ratio exactly 1.0).
    pub fn is_skip_step(&self, k: usize) -> bool {
        self.ratio_for_step(k) == 1.0
    }

    /// Same sizes and stage split with every pruning ratio zeroed; the
    /// baseline arm of a comparison run.
    pub fn unpruned(&self) -> Self {
        ScaleSchedule {
            sizes: self.sizes.clone(),
            n_texture: self.n_texture,
            prune_ratios: vec![0.0; self.n_texture],
            cache_step: self.cache_step,
            mode: self.mode,
        }
    }
}

/// Per-scale residuals f_1..f_K, shaped to a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPyramid {
    residuals: Vec<TokenMap>,
}

impl ResidualPyramid {
    pub fn new(residuals: Vec<TokenMap>, sched: &ScaleSchedule) -> Result<Self> {
        if residuals.len() != sched.k() {
            return Err(FastVarError::Shape(format!(
                "pyramid has {} residuals for a {}-step schedule",
                residuals.len(),
                sched.k()
            )));
        }
        let d = residuals[0].d();
        for (i, r) in residuals.iter().enumerate() {
            let (h, w) = sched.size(i + 1);
            if r.h() != h || r.w() != w {
                return Err(FastVarError::Shape(format!(
                    "residual {} is {}x{}, schedule wants {h}x{w}",
                    i + 1,
                    r.h(),
                    r.w()
                )));
            }
            if r.d() != d {
                return Err(FastVarError::Shape(format!(
                    "residual {} has d = {}, expected {d}",
                    i + 1,
                    r.d()
                )));
            }
        }
        Ok(ResidualPyramid { residuals })
    }

    /// Residual of step `k` (1-based).
    pub fn residual(&self, k: usize) -> &TokenMap {
        &self.residuals[k - 1]
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn d(&self) -> usize {
        self.residuals[0].d()
    }
}

fn check_upto(sched: &ScaleSchedule, upto: usize) -> Result<()> {
    if upto == 0 || upto > sched.k() {
        return Err(FastVarError::InvalidArgument(format!(
            "step {upto} outside schedule 1..={}",
            sched.k()
        )));
    }
    Ok(())
}

/// Recursive reconstruction: r_1 = f_1, then r_k = resize(r_{k-1}) + f_k up
/// to step `upto`. This is the form the decode loop executes.
pub fn accumulate_recursive(
    p: &ResidualPyramid,
    sched: &ScaleSchedule,
    upto: usize,
) -> Result<TokenMap> {
    check_upto(sched, upto)?;
    if p.len() != sched.k() {
        return Err(FastVarError::Shape(format!(
            "pyramid has {} residuals for a {}-step schedule",
            p.len(),
            sched.k()
        )));
    }
    let mut acc = p.residual(1).clone();
    for k in 2..=upto {
        let up = numkern::resize(&acc, sched.size(k), sched.mode())?;
        acc = numkern::add(&up, p.residual(k))?;
    }
    Ok(acc)
}

/// Cumulative reconstruction: the sum over i <= upto of every residual
/// resized straight to the target scale, added in ascending step order.
pub fn accumulate_cumulative(
    p: &ResidualPyramid,
    sched: &ScaleSchedule,
    upto: usize,
) -> Result<TokenMap> {
    check_upto(sched, upto)?;
    if p.len() != sched.k() {
        return Err(FastVarError::Shape(format!(
            "pyramid has {} residuals for a {}-step schedule",
            p.len(),
            sched.k()
        )));
    }
    let target = sched.size(upto);
    let mut acc = numkern::resize(p.residual(1), target, sched.mode())?;
    for k in 2..=upto {
        let up = numkern::resize(p.residual(k), target, sched.mode())?;
        acc = numkern::add(&acc, &up)?;
    }
    Ok(acc)
}

/// Maximum absolute difference between the recursive and cumulative forms at
/// step `upto`. Zero for resize families that compose across the schedule's
/// grids; generally nonzero for bilinear, so callers get a number to inspect
/// rather than an equality claim.
pub fn equivalence_gap(p: &ResidualPyramid, sched: &ScaleSchedule, upto: usize) -> Result<f32> {
    let rec = accumulate_recursive(p, sched, upto)?;
    let cum = accumulate_cumulative(p, sched, upto)?;
    let gap = rec
        .data()
        .iter()
        .zip(cum.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    Ok(gap)
}

/// Greedy residual decomposition of `target`: downsample to scale 1 for f_1,
/// then every later residual is the downsampled target minus the upsampled
/// running reconstruction. Reconstruction therefore returns the target's
/// per-scale downsamples by construction, up to float rounding in the
/// subtract-then-add round trip.
pub fn decompose(target: &TokenMap, sched: &ScaleSchedule) -> Result<ResidualPyramid> {
    let (hk, wk) = sched.size(sched.k());
    if target.h() != hk || target.w() != wk {
        return Err(FastVarError::Shape(format!(
            "target is {}x{}, schedule ends at {hk}x{wk}",
            target.h(),
            target.w()
        )));
    }
    let mut residuals = Vec::with_capacity(sched.k());
    let mut acc: Option<TokenMap> = None;
    for k in 1..=sched.k() {
        let down = numkern::resize(target, sched.size(k), sched.mode())?;
        let f_k = match &acc {
            None => down,
            Some(prev) => {
                let up = numkern::resize(prev, sched.size(k), sched.mode())?;
                subtract(&down, &up)?
            }
        };
        acc = Some(match &acc {
            None => f_k.clone(),
            Some(prev) => {
                let up = numkern::resize(prev, sched.size(k), sched.mode())?;
                numkern::add(&up, &f_k)?
            }
        });
        residuals.push(f_k);
    }
    ResidualPyramid::new(residuals, sched)
}

fn subtract(a: &TokenMap, b: &TokenMap) -> Result<TokenMap> {
    if a.h() != b.h() || a.w() != b.w() || a.d() != b.d() {
        return Err(FastVarError::Shape(format!(
            "subtract {}x{}x{} vs {}x{}x{}",
            a.h(),
            a.w(),
            a.d(),
            b.h(),
            b.w(),
            b.d()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    TokenMap::new(a.h(), a.w(), a.d(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn square_sched(sides: &[usize], mode: ResizeMode) -> ScaleSchedule {
        let sizes = sides.iter().map(|&s| (s, s)).collect();
        ScaleSchedule::new(sizes, 0, vec![], None, mode).unwrap()
    }

    fn rand_f32(rng: &mut ChaCha8Rng) -> f32 {
        let u = (rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0);
        u * 2.0 - 1.0
    }

    fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> TokenMap {
        let data = (0..h * w * d).map(|_| rand_f32(rng)).collect();
        TokenMap::new(h, w, d, data).unwrap()
    }

    /// Values on the dyadic lattice n/256 with |n| < 2^14. Sums and
    /// differences of such values stay on the lattice and well inside f32's
    /// exact range, so the subtract-then-add round trip in decompose incurs
    /// no rounding at all and reconstruction can be compared bit-for-bit.
    fn lattice_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> TokenMap {
        let data = (0..h * w * d)
            .map(|_| {
                let n = (rng.next_u32() % 32_768) as i32 - 16_384;
                n as f32 / 256.0
            })
            .collect();
        TokenMap::new(h, w, d, data).unwrap()
    }

    fn rand_pyramid(rng: &mut ChaCha8Rng, sched: &ScaleSchedule, d: usize) -> ResidualPyramid {
        let residuals = (1..=sched.k())
            .map(|k| {
                let (h, w) = sched.size(k);
                rand_map(rng, h, w, d)
            })
            .collect();
        ResidualPyramid::new(residuals, sched).unwrap()
    }

    #[test]
    fn schedule_validation() {
        let ok = ScaleSchedule::new(
            vec![(1, 1), (2, 2), (3, 3)],
            1,
            vec![0.5],
            None,
            ResizeMode::Nearest,
        );
        assert!(ok.is_ok());
        let s = ok.unwrap();
        assert_eq!(s.structure_end(), 2);
        assert_eq!(s.cache_step(), 2);
        assert_eq!(s.ratio_for_step(1), 0.0);
        assert_eq!(s.ratio_for_step(3), 0.5);
        assert!(s.is_texture_step(3));
        assert!(!s.is_texture_step(2));

        // Not strictly increasing in token count.
        assert!(ScaleSchedule::new(
            vec![(2, 2), (1, 4)],
            0,
            vec![],
            None,
            ResizeMode::Nearest
        )
        .is_err());
        // Texture stage as long as the schedule.
        assert!(ScaleSchedule::new(
            vec![(1, 1), (2, 2)],
            2,
            vec![0.5, 0.5],
            None,
            ResizeMode::Nearest
        )
        .is_err());
        // Ratio out of range.
        assert!(ScaleSchedule::new(
            vec![(1, 1), (2, 2)],
            1,
            vec![1.5],
            None,
            ResizeMode::Nearest
        )
        .is_err());
        // Forwarded step after a skipped one.
        assert!(ScaleSchedule::new(
            vec![(1, 1), (2, 2), (3, 3)],
            2,
            vec![1.0, 0.5],
            None,
            ResizeMode::Nearest
        )
        .is_err());
        // Skip tail is fine.
        assert!(ScaleSchedule::new(
            vec![(1, 1), (2, 2), (3, 3)],
            2,
            vec![0.5, 1.0],
            None,
            ResizeMode::Nearest
        )
        .is_ok());
        // Cache step outside the structure stage.
        assert!(ScaleSchedule::new(
            vec![(1, 1), (2, 2), (3, 3)],
            1,
            vec![0.5],
            Some(3),
            ResizeMode::Nearest
        )
        .is_err());
    }

    #[test]
    fn unpruned_zeroes_ratios_only() {
        let s = ScaleSchedule::new(
            vec![(1, 1), (2, 2), (3, 3)],
            2,
            vec![0.5, 1.0],
            Some(1),
            ResizeMode::Bilinear,
        )
        .unwrap();
        let base = s.unpruned();
        assert_eq!(base.sizes(), s.sizes());
        assert_eq!(base.n_texture(), 2);
        assert_eq!(base.cache_step(), 1);
        assert_eq!(base.prune_ratios(), &[0.0, 0.0]);
    }

    #[test]
    fn pyramid_shape_validation() {
        let sched = square_sched(&[1, 2], ResizeMode::Nearest);
        let bad = ResidualPyramid::new(vec![TokenMap::zeros(1, 1, 2).unwrap()], &sched);
        assert!(bad.is_err());
        let wrong_d = ResidualPyramid::new(
            vec![
                TokenMap::zeros(1, 1, 2).unwrap(),
                TokenMap::zeros(2, 2, 3).unwrap(),
            ],
            &sched,
        );
        assert!(wrong_d.is_err());
    }

    #[test]
    fn recursive_base_case_and_zero_pyramid() {
        let sched = square_sched(&[1, 2, 4], ResizeMode::Nearest);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = rand_pyramid(&mut rng, &sched, 3);
        let r1 = accumulate_recursive(&p, &sched, 1).unwrap();
        assert_eq!(r1.data(), p.residual(1).data());

        let zeros = ResidualPyramid::new(
            (1..=3)
                .map(|k| {
                    let (h, w) = sched.size(k);
                    TokenMap::zeros(h, w, 3).unwrap()
                })
                .collect(),
            &sched,
        )
        .unwrap();
        for k in 1..=3 {
            let r = accumulate_recursive(&zeros, &sched, k).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn recursive_matches_hand_unrolled_two_step() {
        let sched = square_sched(&[2, 4, 8], ResizeMode::Nearest);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = rand_pyramid(&mut rng, &sched, 2);

        let step2 = numkern::add(
            &numkern::resize(p.residual(1), (4, 4), ResizeMode::Nearest).unwrap(),
            p.residual(2),
        )
        .unwrap();
        let step3 = numkern::add(
            &numkern::resize(&step2, (8, 8), ResizeMode::Nearest).unwrap(),
            p.residual(3),
        )
        .unwrap();

        let got = accumulate_recursive(&p, &sched, 3).unwrap();
        assert_eq!(got.data(), step3.data());
    }

    #[test]
    fn cumulative_base_case() {
        let sched = square_sched(&[1, 3], ResizeMode::Bilinear);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = rand_pyramid(&mut rng, &sched, 2);
        let r1 = accumulate_cumulative(&p, &sched, 1).unwrap();
        assert_eq!(r1.data(), p.residual(1).data());
    }

    #[test]
    fn bilinear_gap_is_reported_not_asserted_away() {
        // Non-nested sides, bilinear: the two forms genuinely differ. Seed
        // chosen so the gap is visibly nonzero; the point of the diagnostic
        // is that it reports this number instead of claiming equality.
        let sched = square_sched(&[2, 3, 5], ResizeMode::Bilinear);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = rand_pyramid(&mut rng, &sched, 2);
        let gap = equivalence_gap(&p, &sched, 3).unwrap();
        assert!(gap.is_finite());
        assert!(gap > 0.0, "expected a nonzero form gap, got {gap}");
    }

    #[test]
    fn nearest_nested_gap_is_exactly_zero() {
        let sched = square_sched(&[1, 2, 4, 8], ResizeMode::Nearest);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = rand_pyramid(&mut rng, &sched, 3);
        assert_eq!(equivalence_gap(&p, &sched, 4).unwrap(), 0.0);
    }

    #[test]
    fn decompose_single_scale_is_target() {
        let sched = square_sched(&[3], ResizeMode::Nearest);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = rand_map(&mut rng, 3, 3, 2);
        let p = decompose(&t, &sched).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.residual(1).data(), t.data());
    }

    #[test]
    fn decompose_constant_target() {
        for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
            let sched = square_sched(&[1, 2, 4], mode);
            let t = TokenMap::constant(4, 4, 2, 3.25).unwrap();
            let p = decompose(&t, &sched).unwrap();
            assert!(p.residual(1).data().iter().all(|&v| v == 3.25));
            for k in 2..=3 {
                assert!(
                    p.residual(k).data().iter().all(|&v| v == 0.0),
                    "constant target must decompose to zero residuals past scale 1"
                );
            }
        }
    }

    #[test]
    fn decompose_rejects_wrong_target_shape() {
        let sched = square_sched(&[1, 2], ResizeMode::Nearest);
        let t = TokenMap::zeros(3, 3, 1).unwrap();
        assert!(decompose(&t, &sched).is_err());
    }

    #[test]
    fn decompose_reconstructs_bit_exactly_on_lattice_values() {
        // Lattice-valued targets keep every subtract/add exact, which turns
        // the algebraic identity r_k = u + (t_k - u) = t_k into a bit-level
        // one. Full-range floats are covered by the tolerance test below.
        let sched = square_sched(&[2, 4, 8], ResizeMode::Nearest);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let t = lattice_map(&mut rng, 8, 8, 2);
            let p = decompose(&t, &sched).unwrap();
            let r = accumulate_recursive(&p, &sched, 3).unwrap();
            let same = r
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "lattice reconstruction must be bit-exact");
        }
    }

    proptest! {
        #[test]
        fn prop_reconstruction_within_tolerance(
            seed in 0u64..500,
            bilinear in proptest::bool::ANY,
        ) {
            let mode = if bilinear { ResizeMode::Bilinear } else { ResizeMode::Nearest };
            let sched = square_sched(&[1, 2, 3, 5], mode);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rand_map(&mut rng, 5, 5, 2);
            let p = decompose(&t, &sched).unwrap();
            let r = accumulate_recursive(&p, &sched, 4).unwrap();
            for (a, b) in r.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }

        #[test]
        fn prop_recursive_equals_cumulative_nearest_nested(
            seed in 0u64..500,
            d in 1usize..4,
        ) {
            let sched = square_sched(&[1, 2, 4, 8], ResizeMode::Nearest);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rand_pyramid(&mut rng, &sched, d);
            for upto in 1..=4 {
                let rec = accumulate_recursive(&p, &sched, upto).unwrap();
                let cum = accumulate_cumulative(&p, &sched, upto).unwrap();
                let same = rec
                    .data()
                    .iter()
                    .zip(cum.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same, "forms must agree bit-exactly on nested nearest grids");
            }
        }

        #[test]
        fn prop_accumulate_is_linear(
            seed in 0u64..500,
            bilinear in proptest::bool::ANY,
        ) {
            let mode = if bilinear { ResizeMode::Bilinear } else { ResizeMode::Nearest };
            let sched = square_sched(&[1, 2, 5], mode);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rand_pyramid(&mut rng, &sched, 2);
            let q = rand_pyramid(&mut rng, &sched, 2);
            let sum = ResidualPyramid::new(
                (1..=3)
                    .map(|k| numkern::add(p.residual(k), q.residual(k)).unwrap())
                    .collect(),
                &sched,
            )
            .unwrap();
            let both = accumulate_recursive(&sum, &sched, 3).unwrap();
            let separate = numkern::add(
                &accumulate_recursive(&p, &sched, 3).unwrap(),
                &accumulate_recursive(&q, &sched, 3).unwrap(),
            )
            .unwrap();
            for (a, b) in both.data().iter().zip(separate.data()) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }
    }
}
