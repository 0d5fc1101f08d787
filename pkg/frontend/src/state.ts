/**
 * Dashboard state: the latest service metrics, the job list, and the
 * current result selection.
 *
 * Every displayed count is traceable: snapshots are stored together with
 * the wall-clock time their response arrived, and the UI renders that
 * timestamp next to the numbers.
 */

import { GatewayClient, JobJson, MetricsSnapshot } from "./api.js";

export interface Stamped<T> {
  value: T;
  receivedAt: string;
}

export interface DashboardState {
  metrics: Stamped<MetricsSnapshot> | null;
  jobs: Stamped<JobJson[]> | null;
  pollIntervalMs: number;
  selectedJobId: string | null;
  /** Gallery selection: which instance, and whether the server-annotated
   * PNG (instead of the client overlay) is showing. */
  selectedResult: { sop: string; serverAnnotated: boolean } | null;
}

export function initialState(
  pollIntervalMs: number = 2000,
): DashboardState {
  return {
    metrics: null,
    jobs: null,
    pollIntervalMs,
    selectedJobId: null,
    selectedResult: null,
  };
}

export class DashboardPoller {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: GatewayClient,
    private readonly state: DashboardState,
    private readonly onChange: (state: DashboardState) => void,
    private readonly now: () => string = () => new Date().toISOString(),
  ) {}

  /** One polling round: metrics and the job list. */
  async tick(): Promise<void> {
    const [metrics, jobs] = await Promise.all([
      this.client.metrics(),
      this.client.jobs(),
    ]);
    const receivedAt = this.now();
    this.state.metrics = { value: metrics, receivedAt };
    this.state.jobs = { value: jobs, receivedAt };
    this.onChange(this.state);
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    this.timer = setInterval(() => {
      void this.tick().catch(() => {
        // A missed poll round leaves the previous stamped snapshot (and
        // its timestamp) on screen; the next round recovers.
      });
    }, this.state.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
