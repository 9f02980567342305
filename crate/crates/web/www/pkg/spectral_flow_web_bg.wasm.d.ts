/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_circleflow_free: (a: number, b: number) => void;
export const circleFlow: (a: number, b: number, c: number, d: number) => [number, number, number];
export const circleflow_branches: (a: number) => [number, number];
export const circleflow_dim: (a: number) => number;
export const circleflow_value: (a: number) => number;
export const getzlerSweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const imageKernel: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
