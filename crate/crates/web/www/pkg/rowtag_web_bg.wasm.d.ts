/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const noninterference_pair: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const scaling_curve: (a: number) => [number, number];
export const wavefront: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
