//! Brush-based feasible design generator.
//!
//! The generator places solid and void "touches" of a circular brush, greedily ordered by
//! the sum of the reward over the still-unassigned pixels each touch would claim. Every
//! pixel ends up inside a monochrome brush placement of its own phase, so the output
//! always satisfies the minimum-feature-size constraint.
//!
//! Invariant kept between touches: every unassigned pixel is reachable by at least one
//! valid solid touch and at least one valid void touch. A solid touch can only break void
//! reachability (and vice versa). When an unassigned pixel loses reachability for one
//! phase it is claimed by the best valid touch of the other phase that covers it, which
//! exists because that phase's reachability was untouched. These forced touches cascade
//! until the invariant holds again.

use crate::error::{Error, Result};
use crate::grid::{Brush, DesignGrid, Placements};

/// Binary design, row-major, `1` = solid and `0` = void.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryDesign {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl BinaryDesign {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        Error::check_len(rows * cols, pixels.len())?;
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::param("design pixels must be 0 or 1"));
        }
        Ok(BinaryDesign { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: u8) -> Self {
        BinaryDesign { rows, cols, pixels: vec![value.min(1); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }

    /// Density view with solid = 1.0 and void = 0.0.
    pub fn to_density(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn complement(&self) -> Self {
        BinaryDesign { rows: self.rows, cols: self.cols, pixels: self.pixels.iter().map(|p| 1 - p).collect() }
    }

    /// Compact `0`/`1` string in row-major order.
    pub fn to_bit_string(&self) -> String {
        self.pixels.iter().map(|&p| if p == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(rows: usize, cols: usize, bits: &str) -> Result<Self> {
        let pixels = bits
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(Error::parse(format!("invalid design character {:?}", b as char))),
            })
            .collect::<Result<Vec<u8>>>()?;
        BinaryDesign::new(rows, cols, pixels)
    }
}

/// True iff every solid pixel lies in an all-solid brush placement and every void pixel
/// lies in an all-void one (pixel-coverage form of morphological opening on both phases).
pub fn check_feasibility(design: &BinaryDesign, brush: &Brush) -> bool {
    let Ok(grid) = DesignGrid::new(design.rows(), design.cols(), Default::default(), 1) else {
        return false;
    };
    let placements = Placements::new(&grid, brush);
    check_with_placements(design, &placements)
}

fn check_with_placements(design: &BinaryDesign, placements: &Placements) -> bool {
    let px = design.pixels();
    let mut covered = vec![false; px.len()];
    for a in 0..placements.num_anchors() {
        let disk = placements.disk(a);
        let first = px[disk[0]];
        if disk.iter().all(|&p| px[p] == first) {
            for &p in disk {
                covered[p] = true;
            }
        }
    }
    covered.into_iter().all(|c| c)
}

const UNASSIGNED: u8 = 2;
const SOLID: u8 = 1;
const VOID: u8 = 0;

// Rewards are normalised by their largest magnitude and quantised to this many fractional
// bits so that score sums are exact and independent of summation order.
const SCORE_SCALE: f64 = (1u64 << 40) as f64;

/// Reusable generator for one grid and brush.
#[derive(Clone, Debug)]
pub struct FeasibleDesignGenerator {
    grid: DesignGrid,
    brush: Brush,
    placements: Placements,
}

impl FeasibleDesignGenerator {
    pub fn new(grid: DesignGrid, brush: Brush) -> Result<Self> {
        if brush.diameter() != grid.min_feature() {
            return Err(Error::contract(format!(
                "brush diameter {} differs from minimum feature size {}",
                brush.diameter(),
                grid.min_feature()
            )));
        }
        let placements = Placements::new(&grid, &brush);
        Ok(FeasibleDesignGenerator { grid, brush, placements })
    }

    pub fn for_grid(grid: &DesignGrid) -> Result<Self> {
        Self::new(grid.clone(), Brush::new(grid.min_feature())?)
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn brush(&self) -> &Brush {
        &self.brush
    }

    /// Feasibility check reusing this generator's placement tables.
    pub fn is_feasible(&self, design: &BinaryDesign) -> bool {
        design.rows() == self.grid.rows()
            && design.cols() == self.grid.cols()
            && check_with_placements(design, &self.placements)
    }

    pub fn generate(&self, reward: &[f64]) -> Result<BinaryDesign> {
        Error::check_len(self.grid.len(), reward.len())?;
        let scores = self.quantise(reward)?;
        let mut state = GeneratorState::new(&self.placements, scores);
        state.run(&self.placements);
        let pixels = state.pixel_state;
        debug_assert!(pixels.iter().all(|&p| p != UNASSIGNED));
        Ok(BinaryDesign { rows: self.grid.rows(), cols: self.grid.cols(), pixels })
    }

    /// Generates from `scale * reward`. Any positive scale yields the same design.
    pub fn generate_scaled(&self, reward: &[f64], scale: f64) -> Result<BinaryDesign> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::param(format!("reward scale must be positive, got {scale}")));
        }
        let scaled: Vec<f64> = reward.iter().map(|r| r * scale).collect();
        self.generate(&scaled)
    }

    fn quantise(&self, reward: &[f64]) -> Result<Vec<i64>> {
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::param("reward contains non-finite values"));
        }
        let max = reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let tol = 1e-9 * max;
        if !self.grid.is_symmetric(reward, tol) {
            return Err(Error::contract("reward is not symmetric under the grid symmetry"));
        }
        if max == 0.0 {
            return Ok(vec![0; reward.len()]);
        }
        // Read each orbit from its representative pixel so mirror pairs quantise identically.
        Ok((0..reward.len())
            .map(|i| {
                let rep = self.grid.pixel_of_param(self.grid.param_of(i));
                (reward[rep] / max * SCORE_SCALE).round() as i64
            })
            .collect())
    }
}

/// Convenience wrapper building a one-shot generator.
pub fn generate(reward: &[f64], grid: &DesignGrid, brush: &Brush) -> Result<BinaryDesign> {
    FeasibleDesignGenerator::new(grid.clone(), brush.clone())?.generate(reward)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Solid,
    Void,
}

impl Phase {
    fn pixel(self) -> u8 {
        match self {
            Phase::Solid => SOLID,
            Phase::Void => VOID,
        }
    }
}

struct GeneratorState {
    reward: Vec<i64>,
    pixel_state: Vec<u8>,
    unassigned_left: usize,
    // Per anchor: void pixels inside (blocks a solid touch), solid pixels inside (blocks a
    // void touch), unassigned pixels inside, and the reward summed over those.
    void_inside: Vec<u32>,
    solid_inside: Vec<u32>,
    open_count: Vec<u32>,
    open_reward: Vec<i64>,
    // Per pixel: number of currently valid solid / void touches covering it.
    solid_reach: Vec<u32>,
    void_reach: Vec<u32>,
    forced: Vec<usize>,
}

impl GeneratorState {
    fn new(placements: &Placements, reward: Vec<i64>) -> Self {
        let n = reward.len();
        let na = placements.num_anchors();
        let mut open_count = vec![0u32; na];
        let mut open_reward = vec![0i64; na];
        for a in 0..na {
            let disk = placements.disk(a);
            open_count[a] = disk.len() as u32;
            open_reward[a] = disk.iter().map(|&p| reward[p]).sum();
        }
        let reach: Vec<u32> = (0..n).map(|p| placements.covering(p).len() as u32).collect();
        GeneratorState {
            reward,
            pixel_state: vec![UNASSIGNED; n],
            unassigned_left: n,
            void_inside: vec![0; na],
            solid_inside: vec![0; na],
            open_count,
            open_reward,
            solid_reach: reach.clone(),
            void_reach: reach,
            forced: Vec::new(),
        }
    }

    fn valid(&self, anchor: usize, phase: Phase) -> bool {
        let blocked = match phase {
            Phase::Solid => self.void_inside[anchor],
            Phase::Void => self.solid_inside[anchor],
        };
        blocked == 0 && self.open_count[anchor] > 0
    }

    fn score(&self, anchor: usize, phase: Phase) -> i64 {
        match phase {
            Phase::Solid => self.open_reward[anchor],
            Phase::Void => -self.open_reward[anchor],
        }
    }

    fn run(&mut self, placements: &Placements) {
        while self.unassigned_left > 0 {
            let mut best: Option<(i64, usize, Phase)> = None;
            for a in 0..placements.num_anchors() {
                for phase in [Phase::Solid, Phase::Void] {
                    if self.valid(a, phase) {
                        let s = self.score(a, phase);
                        if best.is_none_or(|(bs, _, _)| s > bs) {
                            best = Some((s, a, phase));
                        }
                    }
                }
            }
            let (_, anchor, phase) = best.expect("reachability invariant guarantees a valid touch");
            self.touch(placements, anchor, phase);
            self.resolve_forced(placements, phase);
        }
    }

    /// Applies a touch at `anchor` and at its mirror image.
    fn touch(&mut self, placements: &Placements, anchor: usize, phase: Phase) {
        for a in [anchor, placements.mirror(anchor)] {
            for &p in placements.disk(a) {
                if self.pixel_state[p] == UNASSIGNED {
                    self.assign(placements, p, phase);
                }
            }
        }
    }

    fn assign(&mut self, placements: &Placements, pixel: usize, phase: Phase) {
        self.pixel_state[pixel] = phase.pixel();
        self.unassigned_left -= 1;
        let r = self.reward[pixel];
        for &a in placements.covering(pixel) {
            self.open_count[a] -= 1;
            self.open_reward[a] -= r;
            let (blockers, newly_blocked) = match phase {
                Phase::Solid => (&mut self.solid_inside, Phase::Void),
                Phase::Void => (&mut self.void_inside, Phase::Solid),
            };
            blockers[a] += 1;
            if blockers[a] == 1 {
                // `a` just became invalid for the opposite phase.
                let reach = match newly_blocked {
                    Phase::Void => &mut self.void_reach,
                    Phase::Solid => &mut self.solid_reach,
                };
                for &q in placements.disk(a) {
                    reach[q] -= 1;
                    if reach[q] == 0 && self.pixel_state[q] == UNASSIGNED {
                        self.forced.push(q);
                    }
                }
            }
        }
    }

    /// Claims pixels that the opposite phase can no longer reach, using touches of `phase`.
    fn resolve_forced(&mut self, placements: &Placements, phase: Phase) {
        while let Some(p) = self.forced.pop() {
            if self.pixel_state[p] != UNASSIGNED {
                continue;
            }
            let anchor = placements
                .covering(p)
                .iter()
                .copied()
                .filter(|&a| self.valid(a, phase))
                .fold(None, |best: Option<(i64, usize)>, a| {
                    let s = self.score(a, phase);
                    match best {
                        Some((bs, ba)) if bs > s || (bs == s && ba < a) => Some((bs, ba)),
                        _ => Some((s, a)),
                    }
                })
                .map(|(_, a)| a)
                .expect("forced pixel keeps a valid touch of the claiming phase");
            self.touch(placements, anchor, phase);
        }
    }
}
