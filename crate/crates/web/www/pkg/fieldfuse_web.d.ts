/* tslint:disable */
/* eslint-disable */

export class Explorer {
    free(): void;
    [Symbol.dispose](): void;
    accuracy(): number;
    classNames(): string[];
    constructor(points: number, views: number, seed: bigint);
    numPoints(): number;
    positions(): Float32Array;
    /**
     * RGB triple per point for a text query.
     */
    query(text: string): Uint8Array;
    refuse(sigma: number, pool: string): void;
    seen(): number;
    /**
     * RGB triple per point for a label list.
     */
    segment(labels: string, engineer: boolean): Uint8Array;
}

export function labelColor(label: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_explorer_free: (a: number, b: number) => void;
    readonly explorer_accuracy: (a: number) => [number, number, number];
    readonly explorer_classNames: (a: number) => [number, number];
    readonly explorer_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly explorer_numPoints: (a: number) => number;
    readonly explorer_positions: (a: number) => [number, number];
    readonly explorer_query: (a: number, b: number, c: number) => [number, number, number, number];
    readonly explorer_refuse: (a: number, b: number, c: number, d: number) => [number, number];
    readonly explorer_seen: (a: number) => number;
    readonly explorer_segment: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly labelColor: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
