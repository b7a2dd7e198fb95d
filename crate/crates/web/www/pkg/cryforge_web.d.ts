/* tslint:disable */
/* eslint-disable */

/**
 * Per-step schedule quantities for `t = 1..=T`.
 */
export class Curves {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly alphaBar: Float64Array;
    readonly betaTilde: Float64Array;
    readonly beta: Float64Array;
}

/**
 * Channel-major log-mel grid.
 */
export class MelGrid {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly channels: number;
    readonly frames: number;
    /**
     * `values[channel * frames + frame]`.
     */
    readonly values: Float64Array;
}

/**
 * A clean signal and its corrupted version at one step.
 */
export class Noised {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly alphaBar: number;
    readonly clean: Float64Array;
    readonly noisy: Float64Array;
    /**
     * Signal-to-noise ratio of the corruption in dB, `10 log10(a / (1 - a))`.
     */
    readonly snrDb: number;
}

export function chirpMel(f_start: number, f_end: number, seconds: number): MelGrid;

export function noiseDemo(steps: number, beta_start: number, beta_end: number, t: number, seed: number, len: number): Noised;

export function scheduleCurves(steps: number, beta_start: number, beta_end: number): Curves;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_curves_free: (a: number, b: number) => void;
    readonly __wbg_melgrid_free: (a: number, b: number) => void;
    readonly __wbg_noised_free: (a: number, b: number) => void;
    readonly chirpMel: (a: number, b: number, c: number) => [number, number, number];
    readonly curves_alphaBar: (a: number) => [number, number];
    readonly curves_beta: (a: number) => [number, number];
    readonly curves_betaTilde: (a: number) => [number, number];
    readonly melgrid_channels: (a: number) => number;
    readonly melgrid_frames: (a: number) => number;
    readonly melgrid_values: (a: number) => [number, number];
    readonly noiseDemo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly noised_alphaBar: (a: number) => number;
    readonly noised_clean: (a: number) => [number, number];
    readonly noised_noisy: (a: number) => [number, number];
    readonly noised_snrDb: (a: number) => number;
    readonly scheduleCurves: (a: number, b: number, c: number) => [number, number, number];
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
