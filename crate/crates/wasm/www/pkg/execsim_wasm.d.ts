/* tslint:disable */
/* eslint-disable */

/**
 * `f(Q) = sign(Q) lambda |Q|^gamma` on `n` points of `[-q_max, q_max]`.
 */
export function impact_curve(lambda: number, gamma: number, q_max: number, n: number): string;

/**
 * Draws one 1000-child schedule from up to two Gaussian modes (second
 * mode used when `two_modes` is set) and bins the child times.
 */
export function schedule_histogram(mu1: number, sigma1: number, mu2: number, sigma2: number, two_modes: boolean, bounded: boolean, seed: bigint, bins: number): string;

/**
 * One paired run of a TWAP sell over the given fraction of a one-hour
 * session, with mids sampled each second. The volume is rounded down to a
 * multiple of the 100 children.
 */
export function simulate_paths(seed: bigint, start_frac: number, end_frac: number, volume: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly impact_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly schedule_histogram: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint, h: number) => [number, number, number, number];
    readonly simulate_paths: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
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
