/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const impact_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const schedule_histogram: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint, h: number) => [number, number, number, number];
export const simulate_paths: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
