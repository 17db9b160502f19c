export interface Suggestion {
  rank: number;
  hs6: string;
  hs4: string;
  hs2: string;
  prob: number;
}

export interface PredictResponse {
  request_id: string;
  model_checksum: string;
  suggestions: Suggestion[];
}

export interface FeedbackAck {
  ok: boolean;
  request_id: string;
  hs6: string;
}

export interface LabelEntry {
  index: number;
  hs6: string;
  hs4: string;
  hs2: string;
}

export interface HealthInfo {
  status: string;
  model_checksum: string;
  vocab_size: number;
}

export interface DeclarationForm {
  description: string;
  title: string;
  category: string;
  image: number[] | null;
  k: number;
}

/** Error carrying the HTTP status and the server's message. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}
