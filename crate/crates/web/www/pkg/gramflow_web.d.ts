/* tslint:disable */
/* eslint-disable */

/**
 * Time axis (fs), gating envelope, initial field and constraint targets.
 */
export function benchmarkSetup(tau_fs: number, n_points: number): string;

/**
 * Condition number of the regularised Gram matrix at the initial field for
 * each ε; values where the factorisation fails are skipped.
 */
export function condScan(tau_fs: number, n_points: number, eps: Float64Array): string;

/**
 * Per-iterate fidelity, conditioning and fluence drift of a flow run.
 */
export function runFlow(tau_fs: number, n_points: number, eps: number, ds: number, max_iter: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly benchmarkSetup: (a: number, b: number) => [number, number, number, number];
    readonly condScan: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly runFlow: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
