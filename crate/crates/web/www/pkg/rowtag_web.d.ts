/* tslint:disable */
/* eslint-disable */

/**
 * Run one random tiled matmul twice, the second time with every tagged
 * word replaced by fresh random data, and report what an observer without
 * access to tagged data can tell apart.
 */
export function noninterference_pair(dim: number, output_stationary: boolean, seed: number, a_tag: number, b_tag: number, d_tag: number): string;

/**
 * Tag-storage registers of the row-granularity design against one
 * register per processing element, for square arrays 2, 4, ... up to
 * `max_dim` (at most 64).
 */
export function scaling_curve(max_dim: number): string;

/**
 * 2x2 weight-stationary `C = A*B + D` with one tag per row, returning the
 * per-cycle state of the array during COMPUTE. Matrices are row-major,
 * four values each; tag arrays have two entries.
 */
export function wavefront(a: Int32Array, b: Int32Array, d: Int32Array, a_tags: Uint8Array, b_tags: Uint8Array, d_tags: Uint8Array): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly noninterference_pair: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly scaling_curve: (a: number) => [number, number];
    readonly wavefront: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
