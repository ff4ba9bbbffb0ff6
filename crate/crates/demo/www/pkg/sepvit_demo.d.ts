/* tslint:disable */
/* eslint-disable */

export function attention_map(side: number, channels: number, heads: number, window: number, seed: bigint): Float32Array;

/**
 * Flattened `[side, sepvit, two_blocks, ratio]` rows.
 */
export function cost_curve(channels: number, window: number, mlp_ratio: number, steps: number): Float64Array;

/**
 * `[window index, position inside the window]` of pixel `(y, x)`.
 */
export function locate(height: number, width: number, window: number, group: number, y: number, x: number): Uint32Array;

export function window_map(height: number, width: number, window: number, group: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly attention_map: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly cost_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly locate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly window_map: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
