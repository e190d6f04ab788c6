/** One scoring request, mirroring the primary's bridge protocol. */
export interface ScoreRequest {
  raw_text: string;
  truth_agent: string | number;
  truth_step: number;
  lambda?: number;
  sigma?: number;
}

/** Reward breakdown returned by the primary scorer. */
export interface ScoreResponse {
  format: number;
  agent: number;
  step: number;
  total: number;
}

/** Per-item failure (e.g. a malformed request); the batch keeps going. */
export interface ScoreFailure {
  error: string;
}

export type ScoreResult = ScoreResponse | ScoreFailure;

export function isFailure(result: ScoreResult): result is ScoreFailure {
  return typeof (result as ScoreFailure).error === "string";
}
