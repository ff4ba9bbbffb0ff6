//! Small computations behind the browser page in `www/`. The plain Rust
//! functions are tested natively; the `wasm_bindgen` exports wrap them and
//! turn errors into JS exceptions.

use sepvit::analyzer::{sepvit_block_cost, two_window_blocks_cost};
use sepvit::nn::Forward;
use sepvit::sepvit::{concat_window_tokens, dwa, pwa_with_attention, slice_tokens, window_partition, BlockParams, TokenMode, WindowLayout};
use sepvit::{Result, SplitMix64, Tape, Tensor};
use wasm_bindgen::prelude::*;

/// One point of a cost curve at feature side `side`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostPoint {
    pub side: usize,
    pub sepvit: u64,
    pub two_blocks: u64,
    pub ratio: f64,
}

/// Separable block vs two window blocks for sides `window, 2·window, …,
/// steps·window` at fixed channels.
pub fn cost_points(channels: usize, window: usize, mlp_ratio: usize, steps: usize) -> Result<Vec<CostPoint>> {
    (1..=steps)
        .map(|k| {
            let side = k * window;
            let (s, c, m, r) = (side as u64, channels as u64, window as u64, mlp_ratio as u64);
            let sepvit = sepvit_block_cost(s, s, c, m, r)?.total();
            let two_blocks = two_window_blocks_cost(s, s, c, m, r)?;
            Ok(CostPoint {
                side,
                sepvit,
                two_blocks,
                ratio: sepvit as f64 / two_blocks as f64,
            })
        })
        .collect()
}

/// Window index of every pixel, row-major over `height × width`.
pub fn window_indices(height: usize, width: usize, window: usize, group: usize) -> Result<Vec<u32>> {
    let layout = WindowLayout::new(height, width, window, group)?;
    Ok((0..height)
        .flat_map(|y| (0..width).map(move |x| layout.locate(y, x).0 as u32))
        .collect())
}

/// Pointwise attention of a freshly initialised block on a `side × side`
/// map whose windows alternate between two random textures in a
/// checkerboard. Returns `[heads, N, N]` row-major.
pub fn attention(side: usize, channels: usize, heads: usize, window: usize, seed: u64) -> Result<Vec<f32>> {
    let layout = WindowLayout::new(side, side, window, 1)?;
    let mut rng = SplitMix64::derive(seed, 0);
    let params = BlockParams::<f32>::new("demo", channels, heads, layout.num_windows(), 4, TokenMode::Learnable, &mut rng)?;
    let textures = [Tensor::<f32>::randn(&[channels], 1.0, &mut rng), Tensor::randn(&[channels], 1.0, &mut rng)];
    let (_, cols) = layout.grid();
    let mut data = Vec::with_capacity(side * side * channels);
    for y in 0..side {
        for x in 0..side {
            let (w, _) = layout.locate(y, x);
            let t = &textures[(w / cols + w % cols) % 2];
            data.extend(t.data().iter().map(|v| v + 0.3 * rng.normal() as f32));
        }
    }
    let tape = Tape::new();
    let ctx = Forward::inference(&tape);
    let x = tape.constant(Tensor::new(vec![1, side, side, channels], data)?);
    let z = concat_window_tokens(&window_partition(&x, &layout)?, &ctx.bind(&params.window_tokens.param))?;
    let z = dwa(&ctx, &params.norm1.forward(&ctx, &z)?, &params)?;
    let (feat, tokens) = slice_tokens(&z)?;
    let (_, attn) = pwa_with_attention(&ctx, &feat, &tokens, &params)?;
    let attn = attn.value();
    Ok(attn.data().to_vec())
}

fn js<T>(r: Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Flattened `[side, sepvit, two_blocks, ratio]` rows.
#[wasm_bindgen]
pub fn cost_curve(channels: usize, window: usize, mlp_ratio: usize, steps: usize) -> Result<Vec<f64>, JsError> {
    let points = js(cost_points(channels, window, mlp_ratio, steps))?;
    Ok(points
        .iter()
        .flat_map(|p| [p.side as f64, p.sepvit as f64, p.two_blocks as f64, p.ratio])
        .collect())
}

#[wasm_bindgen]
pub fn window_map(height: usize, width: usize, window: usize, group: usize) -> Result<Vec<u32>, JsError> {
    js(window_indices(height, width, window, group))
}

/// `[window index, position inside the window]` of pixel `(y, x)`.
#[wasm_bindgen]
pub fn locate(height: usize, width: usize, window: usize, group: usize, y: usize, x: usize) -> Result<Vec<u32>, JsError> {
    let layout = js(WindowLayout::new(height, width, window, group))?;
    if y >= height || x >= width {
        return Err(JsError::new(&format!("pixel ({y}, {x}) is outside {height}×{width}")));
    }
    let (w, p) = layout.locate(y, x);
    Ok(vec![w as u32, p as u32])
}

#[wasm_bindgen]
pub fn attention_map(side: usize, channels: usize, heads: usize, window: usize, seed: u64) -> Result<Vec<f32>, JsError> {
    js(attention(side, channels, heads, window, seed))
}
