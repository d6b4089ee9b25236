//! Enumeration of the cells of the forward itinerary partition along a family
//! of unstable line segments.
//!
//! Every cell of `M₀ⁿ` is thin in the unstable direction and long in the
//! stable one, so a family of unstable segments spaced `Δ` apart crosses every
//! cell whose stable extent exceeds `Δ`. Along each segment the itinerary is
//! piecewise constant; adjacent samples with different itineraries are
//! bisected until the gap between their images at the first differing step
//! falls below the cut resolution and their strips are adjacent, so every
//! strip between them is visited.

use crate::billiard_map::{step, PhasePoint};
use crate::geometry::TableGeometry;
use crate::singularity::{signed_strip, StripParams};

pub(crate) const MAX_DEPTH: usize = 12;

const HASH_SEED: u64 = 0x243F_6A88_85A3_08D3;

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn encode(scatterer: usize, strip: i64, target: usize, offset: [i32; 2]) -> u64 {
    (scatterer as u64 & 0xff)
        | (((strip + (1 << 19)) as u64 & 0xf_ffff) << 8)
        | ((target as u64 & 0xff) << 28)
        | (((offset[0] + 128) as u64 & 0xff) << 36)
        | (((offset[1] + 128) as u64 & 0xff) << 44)
}

/// Straight segment `phi = s`, `r = r0 + s / slope` on one scatterer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Line {
    pub scatterer: usize,
    pub r0: f64,
    pub slope: f64,
    pub half_span: f64,
}

impl Line {
    pub fn point(&self, s: f64) -> PhasePoint {
        PhasePoint::new(self.scatterer, self.r0 + s / self.slope, s)
    }

    fn arclength(&self, ds: f64) -> f64 {
        ds.abs() * (1.0 + 1.0 / (self.slope * self.slope)).sqrt()
    }
}

#[derive(Clone)]
pub(crate) struct Sample {
    pub s: f64,
    /// Number of symbols computed before a near-tangential stop.
    pub valid: usize,
    pub hash: [u64; MAX_DEPTH],
    pub strip: [i64; MAX_DEPTH],
    /// `img[k]` is the point reached after `k + 1` steps.
    pub img: [PhasePoint; MAX_DEPTH],
    /// Largest uncapped strip index met along the itinerary.
    pub max_strip: u64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TraceParams {
    pub cut_resolution: f64,
    pub image_spacing: f64,
    pub min_ds: f64,
    pub strip_cap: u32,
    pub strips: Option<StripParams>,
}

pub(crate) struct Tracer<'a> {
    pub table: &'a TableGeometry,
    pub params: TraceParams,
}

impl<'a> Tracer<'a> {
    fn strip_label(&self, phi: f64) -> (i64, u64) {
        match &self.params.strips {
            None => (0, 0),
            Some(p) => {
                let k = signed_strip(phi, p);
                let cap = self.params.strip_cap as i64;
                (k.clamp(-cap, cap), k.unsigned_abs())
            }
        }
    }

    fn ordinal(&self, k: i64) -> i64 {
        match &self.params.strips {
            None => 0,
            Some(p) if k != 0 => k.signum() * (k.abs() - p.k0 as i64 + 1),
            Some(_) => 0,
        }
    }

    pub fn evaluate(&self, line: &Line, s: f64, depth: usize) -> Sample {
        let x = line.point(s);
        let mut out = Sample {
            s,
            valid: 0,
            hash: [0; MAX_DEPTH],
            strip: [0; MAX_DEPTH],
            img: [x; MAX_DEPTH],
            max_strip: 0,
        };
        let mut y = x;
        let mut h = HASH_SEED;
        for k in 0..depth {
            let Ok(st) = step(self.table, &y) else { break };
            let (strip, raw) = self.strip_label(y.phi);
            h = splitmix(h ^ encode(y.scatterer, strip, st.to.scatterer, st.offset));
            out.hash[k] = h;
            out.strip[k] = strip;
            out.img[k] = st.to;
            out.max_strip = out.max_strip.max(raw);
            out.valid = k + 1;
            y = st.to;
        }
        out
    }

    fn gap(&self, a: &PhasePoint, b: &PhasePoint) -> f64 {
        if a.scatterer != b.scatterer {
            return f64::INFINITY;
        }
        let p = self.table.perimeter(a.scatterer);
        let mut dr = (a.r - b.r).rem_euclid(p);
        if dr > 0.5 * p {
            dr -= p;
        }
        dr.hypot(a.phi - b.phi)
    }

    /// First level at which the two samples disagree.
    pub fn first_difference(a: &Sample, b: &Sample, depth: usize) -> Option<usize> {
        (0..depth).find(|&k| k >= a.valid || k >= b.valid || a.hash[k] != b.hash[k])
    }

    fn should_split(&self, line: &Line, a: &Sample, b: &Sample, depth: usize) -> bool {
        if b.s - a.s < self.params.min_ds {
            return false;
        }
        match Self::first_difference(a, b, depth) {
            None => self.gap(&a.img[depth - 1], &b.img[depth - 1]) > self.params.image_spacing,
            Some(k) => {
                if k >= a.valid || k >= b.valid {
                    return true;
                }
                let gap = if k == 0 { line.arclength(b.s - a.s) } else { self.gap(&a.img[k - 1], &b.img[k - 1]) };
                gap > self.params.cut_resolution || (self.ordinal(a.strip[k]) - self.ordinal(b.strip[k])).abs() > 1
            }
        }
    }

    fn refine_pair(&self, line: &Line, a: &Sample, b: &Sample, depth: usize, out: &mut Vec<Sample>, evals: &mut usize) {
        if !self.should_split(line, a, b, depth) {
            return;
        }
        let m = self.evaluate(line, 0.5 * (a.s + b.s), depth);
        *evals += 1;
        self.refine_pair(line, a, &m, depth, out, evals);
        out.push(m.clone());
        self.refine_pair(line, &m, b, depth, out, evals);
    }

    /// Refines an ordered list of samples so that every adjacent pair satisfies
    /// the stopping rule at `depth`.
    pub fn refine(&self, line: &Line, seeds: Vec<Sample>, depth: usize, evals: &mut usize) -> Vec<Sample> {
        let mut out = Vec::with_capacity(seeds.len() * 4);
        for w in seeds.windows(2) {
            out.push(w[0].clone());
            self.refine_pair(line, &w[0], &w[1], depth, &mut out, evals);
        }
        if let Some(last) = seeds.last() {
            out.push(last.clone());
        }
        out
    }
}

/// Maximal runs of samples sharing a valid level-`k` itinerary, as index ranges.
pub(crate) fn runs(samples: &[Sample], k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if samples[i].valid <= k {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < samples.len() && samples[j + 1].valid > k && samples[j + 1].hash[k] == samples[i].hash[k] {
            j += 1;
        }
        out.push((i, j + 1));
        i = j + 1;
    }
    out
}
