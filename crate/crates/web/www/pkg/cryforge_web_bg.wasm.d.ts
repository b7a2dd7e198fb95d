/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_curves_free: (a: number, b: number) => void;
export const __wbg_melgrid_free: (a: number, b: number) => void;
export const __wbg_noised_free: (a: number, b: number) => void;
export const chirpMel: (a: number, b: number, c: number) => [number, number, number];
export const curves_alphaBar: (a: number) => [number, number];
export const curves_beta: (a: number) => [number, number];
export const curves_betaTilde: (a: number) => [number, number];
export const melgrid_channels: (a: number) => number;
export const melgrid_frames: (a: number) => number;
export const melgrid_values: (a: number) => [number, number];
export const noiseDemo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const noised_alphaBar: (a: number) => number;
export const noised_clean: (a: number) => [number, number];
export const noised_noisy: (a: number) => [number, number];
export const noised_snrDb: (a: number) => number;
export const scheduleCurves: (a: number, b: number, c: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
