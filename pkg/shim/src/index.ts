export { BridgeError, ScoreBridge, type BridgeOptions } from "./bridge.js";
export {
  isFailure,
  type ScoreFailure,
  type ScoreRequest,
  type ScoreResponse,
  type ScoreResult,
} from "./types.js";

import { ScoreBridge } from "./bridge.js";
import { type ScoreRequest, isFailure } from "./types.js";

/** One sampled rollout to score, in trainer-side naming. */
export interface RolloutSample {
  text: string;
  truthAgent: string | number;
  truthStep: number;
  lambda?: number;
  sigma?: number;
}

/**
 * Batch-in, batch-out scoring hook in the shape rollout scorers expect:
 * takes the sampled completions for a prompt group, returns one scalar
 * reward per completion, order preserved.
 *
 * A request-level failure (malformed sample) throws: it signals bad trainer
 * wiring, unlike a malformed completion, which the reward's format gate
 * already maps to 0.
 */
export async function scoreRollouts(
  bridge: ScoreBridge,
  samples: RolloutSample[],
): Promise<number[]> {
  const requests: ScoreRequest[] = samples.map((sample) => ({
    raw_text: sample.text,
    truth_agent: sample.truthAgent,
    truth_step: sample.truthStep,
    ...(sample.lambda !== undefined ? { lambda: sample.lambda } : {}),
    ...(sample.sigma !== undefined ? { sigma: sample.sigma } : {}),
  }));
  const results = await bridge.scoreBatch(requests);
  return results.map((result, i) => {
    if (isFailure(result)) {
      throw new Error(`sample ${i} was rejected by the scorer: ${result.error}`);
    }
    return result.total;
  });
}
