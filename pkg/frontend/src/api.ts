/** Thin typed client for the session service. The UI never derives pixels
 * locally: every displayed image is a server response. */

import type {
  LayerCreateBody,
  LayerCreateResponse,
  LayerPatchBody,
  MutationReport,
  PreviewRequestBody,
  PreviewResponse,
  SessionCreateResponse,
  SessionManifest,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!resp.ok) {
      let code = "unknown";
      let message = `${resp.status}`;
      try {
        const payload = (await resp.json()) as { code?: string; message?: string };
        code = payload.code ?? code;
        message = payload.message ?? message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(code, message, resp.status);
    }
    return (await resp.json()) as T;
  }

  createSession(body: Record<string, unknown>): Promise<SessionCreateResponse> {
    return this.request("POST", "/sessions", body);
  }

  getManifest(sessionId: string): Promise<SessionManifest> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  imageUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/image`;
  }

  addLayer(sessionId: string, body: LayerCreateBody): Promise<LayerCreateResponse> {
    return this.request("POST", `/sessions/${sessionId}/layers`, body);
  }

  patchLayer(sessionId: string, k: number, body: LayerPatchBody): Promise<MutationReport> {
    return this.request("PATCH", `/sessions/${sessionId}/layers/${k}`, body);
  }

  deleteLayer(sessionId: string, k: number): Promise<MutationReport> {
    return this.request("DELETE", `/sessions/${sessionId}/layers/${k}`);
  }

  preview(sessionId: string, k: number, body: PreviewRequestBody): Promise<PreviewResponse> {
    return this.request("POST", `/sessions/${sessionId}/layers/${k}/preview`, body);
  }

  commit(sessionId: string, k: number): Promise<MutationReport> {
    return this.request("POST", `/sessions/${sessionId}/layers/${k}/commit`);
  }

  async getMaskPng(sessionId: string, k: number): Promise<Uint8Array> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/layers/${k}/mask`);
    if (!resp.ok) {
      throw new ApiError("not_found", `mask fetch failed: ${resp.status}`, resp.status);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }
}
