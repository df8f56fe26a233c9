/* tslint:disable */
/* eslint-disable */

/**
 * Level values `W` of the random head on a `resolution^2` grid over
 * `[-extent, extent]^2`, row-major with `y` fastest.
 */
export function potential_grid(seed: bigint, extent: number, resolution: number): Float64Array;

/**
 * Runs the ray sampler on the random head. Returns `[x, y, iterations,
 * converged]` per direction, flattened.
 */
export function sample_boundary(seed: bigint, rho: number, directions: number): Float64Array;

/**
 * `[empirical, bound, std_error]` for random clouds of `n` and `m` points
 * in `[-1, 1]^d`.
 */
export function separability(n: number, m: number, d: number, trials: number, seed: bigint): Float64Array;

/**
 * Simulation labels of the time-reversed Van der Pol field on a
 * `resolution^2` grid over `[-extent, extent]^2`: 1 where the flow reaches
 * the origin within `t_max`, else 0.
 */
export function vdp_region(mu: number, extent: number, resolution: number, t_max: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly potential_grid: (a: bigint, b: number, c: number) => [number, number, number, number];
    readonly sample_boundary: (a: bigint, b: number, c: number) => [number, number, number, number];
    readonly separability: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly vdp_region: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
