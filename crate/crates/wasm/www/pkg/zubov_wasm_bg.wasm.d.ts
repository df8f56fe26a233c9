/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const potential_grid: (a: bigint, b: number, c: number) => [number, number, number, number];
export const sample_boundary: (a: bigint, b: number, c: number) => [number, number, number, number];
export const separability: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const vdp_region: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
