/* tslint:disable */
/* eslint-disable */

export class CircleFlow {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly branches: Float64Array;
    readonly dim: number;
    readonly value: number;
}

/**
 * Spectral flow along the gauge path, with the eigenvalue branches for
 * plotting.
 */
export function circleFlow(n_theta: number, windings: Int32Array, steps: number): CircleFlow;

/**
 * Heat-trace estimate at each scale in `eps`.
 */
export function getzlerSweep(n_theta: number, windings: Int32Array, eps: Float64Array): Float64Array;

/**
 * Half-line heat kernel `k(x, y)` at the points `xs`, Neumann image when
 * `neumann` is set, Dirichlet otherwise.
 */
export function imageKernel(eps: number, y: number, neumann: boolean, xs: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_circleflow_free: (a: number, b: number) => void;
    readonly circleFlow: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly circleflow_branches: (a: number) => [number, number];
    readonly circleflow_dim: (a: number) => number;
    readonly circleflow_value: (a: number) => number;
    readonly getzlerSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly imageKernel: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
