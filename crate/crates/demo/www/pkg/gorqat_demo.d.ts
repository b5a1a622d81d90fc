/* tslint:disable */
/* eslint-disable */

/**
 * Final equilibrium residuals over a `points × points` log grid of starts,
 * row-major with `alpha_task` on the rows.
 */
export function basin(lo: number, hi: number, points: number, loss_task: number, loss_kd: number, lr: number, steps: number): Float64Array;

/**
 * Rows of `[x, fake_quant(x), ste_gradient(x)]` across the range padded by a
 * quarter on each side, so clipping is visible.
 */
export function fake_quant_curve(bits: number, x_min: number, x_max: number, samples: number): Float64Array;

/**
 * Rows of `[alpha_task, alpha_kd, beta]`, one per step, under constant losses.
 * `beta` is the single learnable weight started from the same point.
 */
export function simulate_game(alpha_task: number, alpha_kd: number, loss_task: number, loss_kd: number, lr: number, steps: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly basin: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly fake_quant_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly simulate_game: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
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
