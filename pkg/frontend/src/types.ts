/** Wire types mirroring the service JSON API (snake_case preserved). */

export interface BoxSpec {
  center_x: number;
  center_y: number;
  size: number;
}

export interface LayerManifestEntry {
  index: number;
  prompt: string;
  seed: number;
  alpha_star: number;
  n: number;
  sigma: number;
  b: number | null;
  visible: boolean;
  j: number;
  stale: boolean;
  image_hash?: string;
  denoiser_calls?: number;
  alpha_effective?: number;
}

export interface SessionManifest {
  id: string;
  backend_id: string;
  num_steps: number;
  base: Record<string, unknown>;
  created: string;
  updated: string;
  layers: LayerManifestEntry[];
  canvas: { height: number; width: number };
}

export interface SessionCreateResponse {
  session: SessionManifest;
  image_png_base64: string;
}

export interface PreviewResponse {
  seed: number;
  image_png_base64: string;
  image_hash: string;
  alpha_effective: number;
  denoiser_calls: number;
}

export interface MutationReport {
  recomputed: number[];
  denoiser_calls: number;
  wall_time_ms: number;
  image_hash: string;
}

export interface LayerCreateBody {
  prompt: string;
  seed: number;
  alpha_star: number;
  n: number;
  sigma?: number;
  b?: number | null;
  mask_png_base64?: string;
  box?: BoxSpec;
}

export interface LayerPatchBody {
  prompt?: string;
  seed?: number;
  alpha_star?: number;
  n?: number;
  sigma?: number;
  b?: number | null;
  mask_png_base64?: string;
  box?: BoxSpec;
  visible?: boolean;
}

export interface PreviewRequestBody {
  seed?: number;
  seed_delta?: number;
  center_x?: number;
  center_y?: number;
  size?: number;
}

export interface LayerCreateResponse {
  layer_index: number;
  image_png_base64: string;
  image_hash: string;
  alpha_effective: number;
  denoiser_calls: number;
  report: MutationReport;
}
