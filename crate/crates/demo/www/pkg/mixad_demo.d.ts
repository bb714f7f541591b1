/* tslint:disable */
/* eslint-disable */

/**
 * The series with its detected seasonal component removed.
 */
export function deseasonalize(series: Float64Array): Float64Array;

/**
 * Detected period in samples, or 0 when the spectrum is flat.
 */
export function detect_period(series: Float64Array): number;

/**
 * Base-2 JSD of two nonnegative weight vectors; `NaN` for invalid input.
 */
export function jsd(p: Float64Array, q: Float64Array): number;

/**
 * Row-major `nodes×nodes` relaxed adjacency from a random memory bank and
 * embedding drawn from `structure_seed`. `sampled = false` gives the
 * noise-free graph; otherwise `noise_seed` draws the logistic noise.
 */
export function sample_graph(nodes: number, items: number, tau: number, structure_seed: bigint, noise_seed: bigint, sampled: boolean): Float64Array;

/**
 * Sinusoidal score trace with approximately normal noise and one spike at the
 * midpoint.
 */
export function score_trace(len: number, period: number, noise: number, spike: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly deseasonalize: (a: number, b: number) => [number, number];
    readonly detect_period: (a: number, b: number) => number;
    readonly jsd: (a: number, b: number, c: number, d: number) => number;
    readonly sample_graph: (a: number, b: number, c: number, d: bigint, e: bigint, f: number) => [number, number];
    readonly score_trace: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
