/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_explorer_free: (a: number, b: number) => void;
export const explorer_accuracy: (a: number) => [number, number, number];
export const explorer_classNames: (a: number) => [number, number];
export const explorer_new: (a: number, b: number, c: bigint) => [number, number, number];
export const explorer_numPoints: (a: number) => number;
export const explorer_positions: (a: number) => [number, number];
export const explorer_query: (a: number, b: number, c: number) => [number, number, number, number];
export const explorer_refuse: (a: number, b: number, c: number, d: number) => [number, number];
export const explorer_seen: (a: number) => number;
export const explorer_segment: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const labelColor: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
