//! Lumpy stochastic object model.
//!
//! A background is a sum of `N` identical isotropic Gaussian lumps with
//! centres uniform over the field of view. `N` is Poisson (or fixed). The
//! state is an ordered list of centres with density `P(N) * Area^-N`.
//!
//! The MH proposal is a move/add/remove mixture. All three are exact on the
//! ordered-list space:
//!
//! * move: pick a lump uniformly, add an isotropic Gaussian step. Symmetric.
//! * add: insert a uniform centre at a uniform position among `N + 1` slots,
//!   `q = p_add / (Area (N + 1))`.
//! * remove: delete a uniformly chosen lump, `q = p_remove / N`.
//!
//! When `N = 0`, move and remove are impossible and the add is taken with
//! probability one; the densities use that effective probability.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::imaging::{GaussBlob, PsfParams, SeparableBlob};
use crate::image::{Grid, Image};
use crate::mcmc::Proposal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LumpCount {
    Poisson { mean: f64 },
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumpyPrior {
    pub count: LumpCount,
    pub amplitude: f64,
    /// Lump standard deviation, pixels.
    pub width: f64,
}

impl Default for LumpyPrior {
    fn default() -> Self {
        LumpyPrior {
            count: LumpCount::Poisson { mean: 5.0 },
            amplitude: 1.0,
            width: 7.0,
        }
    }
}

impl LumpyPrior {
    pub fn validate(&self) -> Result<()> {
        if let LumpCount::Poisson { mean } = self.count {
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(Error::InvalidParameter(format!("mean lump count must be positive, got {mean}")));
            }
        }
        if self.amplitude == 0.0 || !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter("lump amplitude must be finite and nonzero".into()));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidParameter(format!("lump width must be positive, got {}", self.width)));
        }
        Ok(())
    }

    pub fn log_count_mass(&self, n: usize) -> f64 {
        match self.count {
            LumpCount::Poisson { mean } => n as f64 * mean.ln() - mean - ln_gamma(n as f64 + 1.0),
            LumpCount::Fixed(k) if k == n => 0.0,
            LumpCount::Fixed(_) => f64::NEG_INFINITY,
        }
    }

    pub fn blob(&self, center: [f64; 2]) -> GaussBlob {
        GaussBlob::isotropic(center, self.width, self.amplitude)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LumpyParams {
    pub centers: Vec<[f64; 2]>,
}

impl LumpyParams {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// `N,x1,y1,x2,y2,...`
    pub fn to_csv_row(&self) -> String {
        let mut row = self.centers.len().to_string();
        for c in &self.centers {
            row.push_str(&format!(",{},{}", c[0], c[1]));
        }
        row
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidParameter(format!("lumpy csv row {row:?}: {reason}"));
        let mut fields = row.trim().split(',');
        let n: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| bad("missing count"))?;
        let values: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad coordinate"))?;
        if values.len() != 2 * n {
            return Err(bad("coordinate count does not match N"));
        }
        Ok(LumpyParams {
            centers: values.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumpyProposalCfg {
    pub p_move: f64,
    pub p_add: f64,
    pub p_remove: f64,
    /// Standard deviation of the isotropic move step, pixels.
    pub move_step: f64,
}

impl Default for LumpyProposalCfg {
    fn default() -> Self {
        LumpyProposalCfg {
            p_move: 0.8,
            p_add: 0.1,
            p_remove: 0.1,
            move_step: 1.0,
        }
    }
}

impl LumpyProposalCfg {
    /// Move-only proposal, for fixed lump counts.
    pub fn move_only(move_step: f64) -> Self {
        LumpyProposalCfg {
            p_move: 1.0,
            p_add: 0.0,
            p_remove: 0.0,
            move_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_move, self.p_add, self.p_remove];
        if ps.iter().any(|p| !(*p >= 0.0)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "proposal probabilities must be nonnegative and sum to 1, got {ps:?}"
            )));
        }
        if !(self.move_step > 0.0) {
            return Err(Error::InvalidParameter("move step must be positive".into()));
        }
        if self.p_add > 0.0 && self.p_remove == 0.0 || self.p_remove > 0.0 && self.p_add == 0.0 {
            return Err(Error::InvalidParameter("add and remove must be both enabled or both disabled".into()));
        }
        Ok(())
    }
}

pub fn sample_lumpy<R: Rng + ?Sized>(prior: &LumpyPrior, grid: Grid, rng: &mut R) -> LumpyParams {
    let n = match prior.count {
        LumpCount::Poisson { mean } => Poisson::new(mean).expect("validated mean").sample(rng) as usize,
        LumpCount::Fixed(k) => k,
    };
    LumpyParams {
        centers: (0..n).map(|_| uniform_center(grid, rng)).collect(),
    }
}

fn uniform_center<R: Rng + ?Sized>(grid: Grid, rng: &mut R) -> [f64; 2] {
    [
        rng.random::<f64>() * grid.nx as f64,
        rng.random::<f64>() * grid.ny as f64,
    ]
}

/// `ln P(N) - N ln Area`, or `-inf` when any centre is outside the field of view.
pub fn log_prior(params: &LumpyParams, prior: &LumpyPrior, grid: Grid) -> f64 {
    if !params.centers.iter().all(|&c| grid.contains(c)) {
        return f64::NEG_INFINITY;
    }
    prior.log_count_mass(params.len()) - params.len() as f64 * grid.area().ln()
}

pub fn measured_background(params: &LumpyParams, prior: &LumpyPrior, psf: &PsfParams, grid: Grid) -> Image {
    let mut img = Image::zeros(grid);
    for &c in &params.centers {
        SeparableBlob::new(c, prior.width, prior.amplitude, psf, grid).accumulate(img.pixels_mut(), 1.0);
    }
    img
}

/// The structural change made by one proposal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LumpyMove {
    /// No lump to move and no trans-dimensional moves enabled.
    Stay,
    Move { index: usize, to: [f64; 2] },
    Add { index: usize, center: [f64; 2] },
    Remove { index: usize },
}

impl LumpyMove {
    pub fn apply(&self, params: &LumpyParams) -> LumpyParams {
        let mut centers = params.centers.clone();
        match *self {
            LumpyMove::Stay => {}
            LumpyMove::Move { index, to } => centers[index] = to,
            LumpyMove::Add { index, center } => centers.insert(index, center),
            LumpyMove::Remove { index } => {
                centers.remove(index);
            }
        }
        LumpyParams { centers }
    }
}

/// Draws a move and returns it with `(log_q_fwd, log_q_rev)`.
pub fn draw_move<R: Rng + ?Sized>(
    params: &LumpyParams,
    cfg: &LumpyProposalCfg,
    grid: Grid,
    rng: &mut R,
) -> (LumpyMove, f64, f64) {
    let n = params.len();
    let ln_area = grid.area().ln();
    let trans_dimensional = cfg.p_add > 0.0;

    let u: f64 = rng.random();
    let kind = if n == 0 {
        if trans_dimensional { 1 } else { 0 }
    } else if u < cfg.p_move {
        0
    } else if u < cfg.p_move + cfg.p_add {
        1
    } else {
        2
    };

    match kind {
        0 if n == 0 => (LumpyMove::Stay, 0.0, 0.0),
        0 => {
            let index = rng.random_range(0..n);
            let c = params.centers[index];
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let to = [c[0] + cfg.move_step * dx, c[1] + cfg.move_step * dy];
            (LumpyMove::Move { index, to }, 0.0, 0.0)
        }
        1 => {
            let index = rng.random_range(0..=n);
            let center = uniform_center(grid, rng);
            let p_add = if n == 0 { 1.0 } else { cfg.p_add };
            let fwd = p_add.ln() - ln_area - ((n + 1) as f64).ln();
            let rev = cfg.p_remove.ln() - ((n + 1) as f64).ln();
            (LumpyMove::Add { index, center }, fwd, rev)
        }
        _ => {
            let index = rng.random_range(0..n);
            let p_add_rev = if n == 1 { 1.0 } else { cfg.p_add };
            let fwd = cfg.p_remove.ln() - (n as f64).ln();
            let rev = p_add_rev.ln() - ln_area - (n as f64).ln();
            (LumpyMove::Remove { index }, fwd, rev)
        }
    }
}

/// Proposes a candidate `θ'` from `q(· | θ)`, returning `(θ', ln q(θ'|θ), ln q(θ|θ'))`.
pub fn propose_lumpy<R: Rng + ?Sized>(
    params: &LumpyParams,
    cfg: &LumpyProposalCfg,
    grid: Grid,
    rng: &mut R,
) -> (LumpyParams, f64, f64) {
    let (mv, fwd, rev) = draw_move(params, cfg, grid, rng);
    (mv.apply(params), fwd, rev)
}

/// Chain state carrying per-lump separable images and the summed background,
/// so a proposal only recomputes the lump it touches.
#[derive(Clone, Debug)]
pub struct LumpyState {
    pub params: LumpyParams,
    blobs: Vec<SeparableBlob>,
    background: Image,
}

impl LumpyState {
    pub fn new(params: LumpyParams, prior: &LumpyPrior, psf: &PsfParams, grid: Grid) -> Self {
        let blobs: Vec<SeparableBlob> = params
            .centers
            .iter()
            .map(|&c| SeparableBlob::new(c, prior.width, prior.amplitude, psf, grid))
            .collect();
        let mut background = Image::zeros(grid);
        for b in &blobs {
            b.accumulate(background.pixels_mut(), 1.0);
        }
        LumpyState {
            params,
            blobs,
            background,
        }
    }

    pub fn background(&self) -> &Image {
        &self.background
    }

    pub fn apply(&self, mv: &LumpyMove, prior: &LumpyPrior, psf: &PsfParams) -> LumpyState {
        let grid = self.background.grid();
        let mut next = self.clone();
        match *mv {
            LumpyMove::Stay => {}
            LumpyMove::Move { index, to } => {
                let blob = SeparableBlob::new(to, prior.width, prior.amplitude, psf, grid);
                blob.replace(&self.blobs[index], next.background.pixels_mut());
                next.blobs[index] = blob;
                next.params.centers[index] = to;
            }
            LumpyMove::Add { index, center } => {
                let blob = SeparableBlob::new(center, prior.width, prior.amplitude, psf, grid);
                blob.accumulate(next.background.pixels_mut(), 1.0);
                next.blobs.insert(index, blob);
                next.params.centers.insert(index, center);
            }
            LumpyMove::Remove { index } => {
                let blob = next.blobs.remove(index);
                blob.accumulate(next.background.pixels_mut(), -1.0);
                next.params.centers.remove(index);
            }
        }
        next
    }
}

/// The lumpy model bound to an imaging system, usable as a chain object model.
#[derive(Clone, Debug)]
pub struct LumpyModel {
    pub prior: LumpyPrior,
    pub proposal: LumpyProposalCfg,
    pub psf: PsfParams,
    pub grid: Grid,
}

impl LumpyModel {
    pub fn new(prior: LumpyPrior, proposal: LumpyProposalCfg, psf: PsfParams, grid: Grid) -> Result<Self> {
        prior.validate()?;
        proposal.validate()?;
        psf.validate()?;
        Ok(LumpyModel {
            prior,
            proposal,
            psf,
            grid,
        })
    }

    pub fn state(&self, params: LumpyParams) -> LumpyState {
        LumpyState::new(params, &self.prior, &self.psf, self.grid)
    }

    pub fn propose_state<R: Rng + ?Sized>(&self, state: &LumpyState, rng: &mut R) -> Proposal<LumpyState> {
        let (mv, log_q_fwd, log_q_rev) = draw_move(&state.params, &self.proposal, self.grid, rng);
        Proposal {
            candidate: state.apply(&mv, &self.prior, &self.psf),
            log_q_fwd,
            log_q_rev,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSpec;
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::default()
    }

    #[test]
    fn sampled_count_matches_poisson() {
        let prior = LumpyPrior::default();
        let mut rng = SeedSpec::new(1).stream("lumpy", 0);
        let n = 100_000;
        let mut fives = 0usize;
        let mut total = 0usize;
        for _ in 0..n {
            let p = sample_lumpy(&prior, grid(), &mut rng);
            assert!(p.centers.iter().all(|&c| grid().contains(c)));
            fives += (p.len() == 5) as usize;
            total += p.len();
        }
        let pmf5 = (-5.0f64).exp() * 5f64.powi(5) / 120.0;
        assert_relative_eq!(pmf5, 0.175_467, max_relative = 1e-5);
        assert!((fives as f64 / n as f64 - pmf5).abs() < 0.004);
        assert!((total as f64 / n as f64 - 5.0).abs() < 0.03);
    }

    #[test]
    fn log_prior_values() {
        let prior = LumpyPrior::default();
        assert_relative_eq!(log_prior(&LumpyParams::default(), &prior, grid()), -5.0, max_relative = 1e-15);
        let five = LumpyParams {
            centers: vec![[10.0, 10.0]; 5],
        };
        let expected = 0.175_467_369_767_850_6f64.ln() + 5.0 * (1.0f64 / 4096.0).ln();
        assert_relative_eq!(log_prior(&five, &prior, grid()), expected, max_relative = 1e-12);
        let outside = LumpyParams {
            centers: vec![[-1.0, 3.0]],
        };
        assert_eq!(log_prior(&outside, &prior, grid()), f64::NEG_INFINITY);
    }

    #[test]
    fn fixed_count_prior() {
        let prior = LumpyPrior {
            count: LumpCount::Fixed(2),
            ..LumpyPrior::default()
        };
        let two = LumpyParams {
            centers: vec![[1.0, 1.0], [2.0, 2.0]],
        };
        assert_relative_eq!(log_prior(&two, &prior, grid()), -2.0 * 4096f64.ln());
        assert_eq!(log_prior(&LumpyParams::default(), &prior, grid()), f64::NEG_INFINITY);
        assert_eq!(sample_lumpy(&prior, grid(), &mut SeedSpec::new(0).stream("x", 0)).len(), 2);
    }

    #[test]
    fn background_examples() {
        let prior = LumpyPrior::default();
        let psf = PsfParams::default();
        let empty = measured_background(&LumpyParams::default(), &prior, &psf, grid());
        assert!(empty.pixels().iter().all(|&v| v == 0.0));

        let one = LumpyParams {
            centers: vec![[32.5, 32.5]],
        };
        let single = measured_background(&one, &prior, &psf, grid());
        assert_relative_eq!(single.get(32, 32), 40.0 * 49.0 / 49.25, max_relative = 1e-13);

        let two = LumpyParams {
            centers: vec![[32.5, 32.5]; 2],
        };
        let double = measured_background(&two, &prior, &psf, grid());
        for (a, b) in single.pixels().iter().zip(double.pixels()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn degenerate_move_is_identity() {
        let cfg = LumpyProposalCfg::move_only(1e-300);
        let params = LumpyParams {
            centers: vec![[3.0, 4.0], [50.0, 60.0]],
        };
        let (cand, fwd, rev) = propose_lumpy(&params, &cfg, grid(), &mut SeedSpec::new(5).stream("p", 0));
        assert_eq!(cand, params);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn add_from_empty() {
        let cfg = LumpyProposalCfg::default();
        let (cand, fwd, rev) =
            propose_lumpy(&LumpyParams::default(), &cfg, grid(), &mut SeedSpec::new(5).stream("p", 0));
        assert_eq!(cand.len(), 1);
        assert_relative_eq!(rev, cfg.p_remove.ln() - 1f64.ln());
        assert_relative_eq!(fwd, -4096f64.ln());
    }

    #[test]
    fn remove_and_add_densities_mirror() {
        let cfg = LumpyProposalCfg::default();
        let params = LumpyParams {
            centers: vec![[3.0, 4.0], [50.0, 60.0], [10.0, 10.0]],
        };
        let mut rng = SeedSpec::new(9).stream("p", 0);
        let mut seen_add = false;
        let mut seen_remove = false;
        for _ in 0..200 {
            let (mv, fwd, rev) = draw_move(&params, &cfg, grid(), &mut rng);
            match mv {
                LumpyMove::Add { .. } => {
                    seen_add = true;
                    assert_relative_eq!(fwd, 0.1f64.ln() - 4096f64.ln() - 4f64.ln());
                    assert_relative_eq!(rev, 0.1f64.ln() - 4f64.ln());
                }
                LumpyMove::Remove { .. } => {
                    seen_remove = true;
                    assert_relative_eq!(fwd, 0.1f64.ln() - 3f64.ln());
                    assert_relative_eq!(rev, 0.1f64.ln() - 4096f64.ln() - 3f64.ln());
                }
                LumpyMove::Move { .. } | LumpyMove::Stay => assert_eq!(fwd, rev),
            }
        }
        assert!(seen_add && seen_remove);
    }

    #[test]
    fn add_density_is_normalized() {
        // Monte Carlo estimate of the integral of q_add over candidate centres:
        // E_uniform[q_add(c) * Area * (N + 1)] summed over insertion slots = p_add.
        let cfg = LumpyProposalCfg::default();
        let params = LumpyParams {
            centers: vec![[3.0, 4.0]],
        };
        let mut rng = SeedSpec::new(2).stream("p", 0);
        let trials = 20_000;
        let mut adds = 0;
        let mut integral = 0.0;
        for _ in 0..trials {
            let (mv, fwd, _) = draw_move(&params, &cfg, grid(), &mut rng);
            if let LumpyMove::Add { .. } = mv {
                adds += 1;
                integral = fwd.exp() * 4096.0 * 2.0;
            }
        }
        assert!(integral <= 1.0);
        assert_relative_eq!(integral, cfg.p_add, max_relative = 1e-12);
        assert!((adds as f64 / trials as f64 - cfg.p_add).abs() < 0.01);
    }

    #[test]
    fn incremental_background_matches_full_recompute() {
        let prior = LumpyPrior::default();
        let psf = PsfParams::default();
        let model = LumpyModel::new(prior, LumpyProposalCfg::default(), psf, grid()).unwrap();
        let mut rng = SeedSpec::new(3).stream("cache", 0);
        let mut state = model.state(sample_lumpy(&prior, grid(), &mut rng));
        for _ in 0..10_000 {
            let prop = model.propose_state(&state, &mut rng);
            if prop.candidate.params.centers.iter().all(|&c| grid().contains(c)) {
                state = prop.candidate;
            }
        }
        let full = measured_background(&state.params, &prior, &psf, grid());
        assert!(state.background().max_abs_diff(&full) <= 1e-10);
    }

    #[test]
    fn csv_row_roundtrip() {
        let params = LumpyParams {
            centers: vec![[1.5, 2.25], [63.0, 0.125]],
        };
        let row = params.to_csv_row();
        assert_eq!(row, "2,1.5,2.25,63,0.125");
        assert_eq!(LumpyParams::from_csv_row(&row).unwrap(), params);
        assert!(LumpyParams::from_csv_row("3,1,2").is_err());
    }

    #[test]
    fn proposal_validation() {
        assert!(LumpyProposalCfg::default().validate().is_ok());
        let bad = LumpyProposalCfg {
            p_move: 0.5,
            ..LumpyProposalCfg::default()
        };
        assert!(bad.validate().is_err());
    }
}
