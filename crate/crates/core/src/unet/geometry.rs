use crate::error::{Error, Result};

/// Largest input side the solver will consider.
pub const MAX_INPUT: usize = 4096;

/// Spatial bookkeeping for a valid-convolution U-Net on square inputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeometryPlan {
    pub depth: usize,
    pub input_size: usize,
    pub output_size: usize,
    /// Size after the two convolutions of each contraction level, i.e. the size entering each pool.
    pub down_sizes: Vec<usize>,
    pub bottleneck: usize,
    /// Size after the two convolutions of each expansion level, deepest first.
    pub up_sizes: Vec<usize>,
    /// Side of the square content canvas the output must cover.
    pub target: usize,
    /// Offset of the content canvas inside the output.
    pub output_crop: usize,
    /// Offset of the content canvas inside the input.
    pub content_origin: usize,
}

impl GeometryPlan {
    /// Border added around the content canvas on the top/left side.
    pub fn pad(&self) -> usize {
        self.content_origin
    }
}

/// Real-valued size recurrence `f₀(i) = i − 4`, `f_L(i) = 2·f_{L−1}((i − 4)/2) − 4`.
///
/// Intermediate sizes may be fractional; [`trace_geometry`] checks integrality.
pub fn recurrence_output(input: f64, depth: usize) -> f64 {
    if depth == 0 {
        input - 4.0
    } else {
        2.0 * recurrence_output((input - 4.0) / 2.0, depth - 1) - 4.0
    }
}

/// Follows an input of side `input` through the network. Fails if any level
/// would pool an odd size or shrink to nothing.
pub fn trace_geometry(input: usize, depth: usize) -> Result<GeometryPlan> {
    let fail = |why: String| Err(Error::invalid(format!("input {input} at depth {depth}: {why}")));
    let mut s = input;
    let mut down_sizes = Vec::with_capacity(depth);
    for level in 0..depth {
        if s <= 4 {
            return fail(format!("level {level} has no room for two 3x3 convolutions"));
        }
        s -= 4;
        if !s.is_multiple_of(2) {
            return fail(format!("level {level} pools an odd size {s}"));
        }
        down_sizes.push(s);
        s /= 2;
    }
    if s <= 4 {
        return fail("bottleneck has no room for two 3x3 convolutions".into());
    }
    s -= 4;
    let bottleneck = s;
    let mut up_sizes = Vec::with_capacity(depth);
    for _ in 0..depth {
        s *= 2;
        if s <= 4 {
            return fail("expansion level collapses".into());
        }
        s -= 4;
        up_sizes.push(s);
    }
    Ok(GeometryPlan {
        depth,
        input_size: input,
        output_size: s,
        down_sizes,
        bottleneck,
        up_sizes,
        target: s,
        output_crop: 0,
        content_origin: (input - s) / 2,
    })
}

/// Smallest valid input whose output covers a `target`×`target` canvas.
pub fn geometry_solve(target: usize, depth: usize) -> Result<GeometryPlan> {
    if target == 0 {
        return Err(Error::invalid("target output must be at least 1 pixel"));
    }
    for input in 1..=MAX_INPUT {
        let Ok(mut plan) = trace_geometry(input, depth) else { continue };
        if plan.output_size < target {
            continue;
        }
        plan.target = target;
        plan.output_crop = (plan.output_size - target) / 2;
        plan.content_origin = (input - plan.output_size) / 2 + plan.output_crop;
        return Ok(plan);
    }
    Err(Error::invalid(format!("no input up to {MAX_INPUT}px yields a {target}px output at depth {depth}")))
}
