import {
  ApiError,
  DeclarationForm,
  FeedbackAck,
  HealthInfo,
  LabelEntry,
  PredictResponse,
} from "./types.js";

/** Thin client for the prediction service; base is "" in production (same
 * origin) and an absolute URL in tests. */
export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(response.status, (body as { error?: string }).error ?? `HTTP ${response.status}`);
    }
    return body as T;
  }

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(response.status, (body as { error?: string }).error ?? `HTTP ${response.status}`);
    }
    return body as T;
  }

  predict(form: DeclarationForm): Promise<PredictResponse> {
    const payload: Record<string, unknown> = {
      description: form.description,
      title: form.title,
      category: form.category,
      k: form.k,
    };
    if (form.image !== null) {
      payload.image = form.image;
    }
    return this.post<PredictResponse>("/api/predict", payload);
  }

  feedback(requestId: string, hs6: string): Promise<FeedbackAck> {
    return this.post<FeedbackAck>("/api/feedback", { request_id: requestId, hs6 });
  }

  labels(): Promise<{ labels: LabelEntry[] }> {
    return this.get<{ labels: LabelEntry[] }>("/api/labels");
  }

  health(): Promise<HealthInfo> {
    return this.get<HealthInfo>("/api/health");
  }
}

/** Parse a precomputed embedding file: JSON array, or whitespace/comma
 * separated decimals. Returns null for empty content. */
export function parseEmbeddingText(text: string): number[] | null {
  const trimmed = text.trim();
  if (trimmed === "") return null;
  let values: number[];
  if (trimmed.startsWith("[")) {
    const parsed = JSON.parse(trimmed) as unknown;
    if (!Array.isArray(parsed)) throw new Error("embedding JSON must be an array");
    values = parsed.map(Number);
  } else {
    values = trimmed.split(/[\s,]+/).map(Number);
  }
  if (values.some((v) => !Number.isFinite(v))) {
    throw new Error("embedding file contains non-numeric values");
  }
  return values;
}
