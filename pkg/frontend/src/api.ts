/** Typed client for the retrieval service HTTP API. */

export interface RetrieveResult {
  photo_id: string;
  distance: number;
  thumbnail_url: string;
}

export interface RetrieveResponse {
  results: RetrieveResult[];
  model_version: string;
  latency_ms: number;
}

export interface HealthResponse {
  status: string;
  model_version?: string;
  gallery_size?: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
  }
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

/** Runtime-independent base64 so browser and test environments agree byte for byte. */
export function toBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i]!;
    const b = i + 1 < bytes.length ? bytes[i + 1]! : 0;
    const c = i + 2 < bytes.length ? bytes[i + 2]! : 0;
    out += B64[a >> 2]! + B64[((a & 3) << 4) | (b >> 4)]!;
    out += i + 1 < bytes.length ? B64[((b & 15) << 2) | (c >> 6)]! : "=";
    out += i + 2 < bytes.length ? B64[c & 63]! : "=";
  }
  return out;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async retrieve(png: Uint8Array, k: number): Promise<RetrieveResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/retrieve`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image: toBase64(png), k }),
    });
    if (!resp.ok) {
      const detail = await resp
        .json()
        .then((body: { detail?: string }) => body.detail ?? resp.statusText)
        .catch(() => resp.statusText);
      throw new ServiceError(resp.status, detail);
    }
    return (await resp.json()) as RetrieveResponse;
  }

  async health(): Promise<HealthResponse> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/health`);
    return (await resp.json()) as HealthResponse;
  }

  photoUrl(photoId: string): string {
    return `${this.baseUrl}/api/photo/${encodeURIComponent(photoId)}`;
  }
}
