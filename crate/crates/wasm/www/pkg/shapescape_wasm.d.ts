/* tslint:disable */
/* eslint-disable */

/**
 * JSON array of `{id, c1, c2, f}`; id 0 is the circle.
 */
export function dido_landscape(seed: number, num_shapes: number, n: number, delta: number, epsilon: number): string;

/**
 * Flat point list of the interpolant at time `t`.
 */
export function interpolate_shapes(t: number, n: number): Float64Array;

/**
 * JSON `{points, coefficients, ratio, divergence, exact, bound}`.
 */
export function perturbed_shape(seed: number, order: number, delta: number, n: number, epsilon: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly dido_landscape: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly interpolate_shapes: (a: number, b: number) => [number, number, number, number];
    readonly perturbed_shape: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
