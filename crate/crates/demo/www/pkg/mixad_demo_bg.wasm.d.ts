/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const deseasonalize: (a: number, b: number) => [number, number];
export const detect_period: (a: number, b: number) => number;
export const jsd: (a: number, b: number, c: number, d: number) => number;
export const sample_graph: (a: number, b: number, c: number, d: bigint, e: bigint, f: number) => [number, number];
export const score_trace: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
