import type {
  LabelSubmission,
  Progress,
  PrototypeListing,
  StoredRecord,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

/**
 * Thin typed client for the annotation service. The fetch implementation is
 * injected so tests can run against an in-memory server.
 */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path);
    if (!response.ok) {
      throw new ApiError(response.status, `GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  parts(): Promise<{ parts: string[] }> {
    return this.get("/api/parts");
  }

  prototypes(part: string): Promise<PrototypeListing> {
    return this.get(`/api/prototypes?part=${encodeURIComponent(part)}`);
  }

  progress(part: string): Promise<Progress> {
    return this.get(`/api/progress?part=${encodeURIComponent(part)}`);
  }

  async submitLabel(submission: LabelSubmission): Promise<StoredRecord> {
    const response = await this.fetchFn(this.baseUrl + "/api/labels", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `POST /api/labels -> ${response.status}`);
    }
    const payload = (await response.json()) as { stored: StoredRecord };
    return payload.stored;
  }
}
