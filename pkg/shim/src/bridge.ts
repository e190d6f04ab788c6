import { type ChildProcessWithoutNullStreams, spawn } from "node:child_process";
import { type Interface, createInterface } from "node:readline";

import type { ScoreRequest, ScoreResult } from "./types.js";

/** The scoring subprocess died twice while handling one batch. */
export class BridgeError extends Error {}

export interface BridgeOptions {
  /** Executable for the scoring process; defaults to the installed CLI. */
  command?: string;
  args?: string[];
}

interface Waiter {
  resolve: (line: string) => void;
  reject: (err: Error) => void;
}

/**
 * Line-delimited JSON bridge to the primary reward scorer.
 *
 * One bridge process per training worker; requests within a worker are
 * serialized (a request is written only after the previous response has
 * arrived), so responses map to requests by order.
 *
 * Restart-once policy: if the subprocess dies mid-batch, it is respawned
 * and the interrupted request is resent; a second death within the same
 * batch raises BridgeError.
 */
export class ScoreBridge {
  readonly command: string;
  readonly args: string[];
  /** Total respawns after mid-flight deaths, across the bridge lifetime. */
  restarts = 0;

  private child: ChildProcessWithoutNullStreams | null = null;
  private reader: Interface | null = null;
  private waiters: Waiter[] = [];

  constructor(options: BridgeOptions = {}) {
    this.command = options.command ?? "faultline";
    this.args = options.args ?? ["bridge"];
  }

  get pid(): number | undefined {
    return this.child?.pid;
  }

  private alive(): boolean {
    return this.child !== null && this.child.exitCode === null && !this.child.killed;
  }

  private ensureChild(): ChildProcessWithoutNullStreams {
    if (this.child && this.alive()) {
      return this.child;
    }
    const child = spawn(this.command, this.args, { stdio: ["pipe", "pipe", "pipe"] });
    this.child = child;
    this.reader = createInterface({ input: child.stdout, crlfDelay: Infinity });
    this.reader.on("line", (line) => {
      if (this.child !== child) {
        return; // stale output from an already-replaced process
      }
      const waiter = this.waiters.shift();
      if (waiter) {
        waiter.resolve(String(line));
      }
    });

    const failPending = (why: string) => {
      if (this.child !== child) {
        return; // a replaced process dying late must not fail the current one
      }
      const pending = this.waiters;
      this.waiters = [];
      for (const waiter of pending) {
        waiter.reject(new BridgeError(why));
      }
    };
    child.stdin.on("error", () => {
      /* EPIPE on a dying child; the exit handler settles the waiters */
    });
    child.on("error", (err) => failPending(`bridge process failed: ${err.message}`));
    child.on("exit", (code, signal) =>
      failPending(`bridge process exited (code=${code}, signal=${String(signal)})`),
    );
    return child;
  }

  private disposeChild(): void {
    this.reader?.close();
    this.reader = null;
    if (this.child && this.child.exitCode === null) {
      this.child.kill("SIGKILL");
    }
    this.child = null;
  }

  private roundTrip(request: ScoreRequest): Promise<string> {
    const child = this.ensureChild();
    return new Promise<string>((resolve, reject) => {
      this.waiters.push({ resolve, reject });
      child.stdin.write(`${JSON.stringify(request)}\n`);
    });
  }

  /**
   * Score a batch, order-preserving: one result per request.
   *
   * Malformed requests come back as per-item `{error}` results from the
   * scorer; only process death is an exception, and only after the
   * restart-once budget is spent.
   */
  async scoreBatch(requests: ScoreRequest[]): Promise<ScoreResult[]> {
    const results: ScoreResult[] = [];
    let restartsLeft = 1;
    for (const request of requests) {
      for (;;) {
        try {
          const line = await this.roundTrip(request);
          results.push(JSON.parse(line) as ScoreResult);
          break;
        } catch (err) {
          this.disposeChild();
          if (restartsLeft === 0) {
            throw new BridgeError(
              `bridge died twice in one batch (at request ${results.length}): ` +
                `${(err as Error).message}`,
            );
          }
          restartsLeft -= 1;
          this.restarts += 1;
        }
      }
    }
    return results;
  }

  /** Kill the subprocess; the next batch spawns a fresh one. */
  kill(): void {
    this.disposeChild();
  }

  /** Graceful shutdown: close stdin and let the subprocess exit on EOF. */
  async close(): Promise<void> {
    const child = this.child;
    if (!child || child.exitCode !== null) {
      this.disposeChild();
      return;
    }
    await new Promise<void>((resolve) => {
      child.once("exit", () => resolve());
      child.stdin.end();
    });
    this.disposeChild();
  }
}
