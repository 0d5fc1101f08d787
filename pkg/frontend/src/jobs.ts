/**
 * Detection-job submission, polling, and the result-gallery view model.
 *
 * The gateway has no streaming route, so job progress is polled (2 s
 * default).  Gallery tiles are built from the per-instance result
 * documents: a tile is "marked" when the detector emitted at least one
 * box.  In test mode the marked set is compared against the corpus
 * generator's ground-truth manifest.
 */

import { GatewayClient, JobJson, JobStateName } from "./api.js";
import { CohortQueryJson } from "./query.js";

export const TERMINAL_STATES: ReadonlySet<JobStateName> = new Set([
  "done",
  "failed",
  "canceled",
]);

export const DEFAULT_POLL_INTERVAL_MS = 2000;

export interface SubmissionGuard {
  enabled: boolean;
  hint: string | null;
}

/** A job may be submitted only for a non-empty cohort, with a plugin chosen
 * and a session token entered; otherwise the control is disabled with the
 * reason as its hint. */
export function submissionGuard(
  previewCount: number | null,
  plugin: string,
  hasToken: boolean,
): SubmissionGuard {
  if (previewCount === null) {
    return { enabled: false, hint: "waiting for a cohort preview" };
  }
  if (previewCount === 0) {
    return {
      enabled: false,
      hint: "the cohort matches no instances — refine the filter first",
    };
  }
  if (plugin === "") {
    return { enabled: false, hint: "choose a detection plugin" };
  }
  if (!hasToken) {
    return { enabled: false, hint: "enter the API token to submit jobs" };
  }
  return { enabled: true, hint: null };
}

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  label: string;
  score: number;
}

export interface GalleryTile {
  sop: string;
  boxes: Box[];
  marked: boolean;
  pngUrl: string;
  annotatedUrl: string | null;
}

type Sleep = (ms: number) => Promise<void>;

const realSleep: Sleep = (ms) =>
  new Promise((resolve) => setTimeout(resolve, ms));

export class JobMonitor {
  constructor(
    private readonly client: GatewayClient,
    private readonly pollIntervalMs: number = DEFAULT_POLL_INTERVAL_MS,
    private readonly sleep: Sleep = realSleep,
  ) {}

  async submit(query: CohortQueryJson, plugin: string): Promise<JobJson> {
    return this.client.submitJob(query, plugin);
  }

  /** Poll until the job reaches a terminal state; `onUpdate` fires for
   * every observed snapshot including the terminal one. */
  async watch(
    jobId: string,
    onUpdate?: (job: JobJson) => void,
  ): Promise<JobJson> {
    for (;;) {
      const job = await this.client.job(jobId);
      onUpdate?.(job);
      if (TERMINAL_STATES.has(job.state)) {
        return job;
      }
      await this.sleep(this.pollIntervalMs);
    }
  }

  async cancel(jobId: string): Promise<JobJson> {
    return this.client.cancelJob(jobId);
  }
}

/** Build gallery tiles from a job's result documents, ordered by instance
 * UID.  Boxes arrive as a JSON-encoded string inside the document. */
export function buildGallery(
  client: GatewayClient,
  jobId: string,
  documents: Record<string, string>[],
): GalleryTile[] {
  const tiles = documents.map((doc) => {
    const sop = doc.SOPInstanceUID ?? "";
    const boxes = JSON.parse(doc.boxes ?? "[]") as Box[];
    return {
      sop,
      boxes,
      marked: boxes.length > 0,
      pngUrl: client.resultPngUrl(jobId, sop, false),
      annotatedUrl:
        doc.annotated_png !== undefined
          ? client.resultPngUrl(jobId, sop, true)
          : null,
    };
  });
  tiles.sort((a, b) => (a.sop < b.sop ? -1 : a.sop > b.sop ? 1 : 0));
  return tiles;
}

export function markedInstances(tiles: GalleryTile[]): Set<string> {
  return new Set(tiles.filter((tile) => tile.marked).map((tile) => tile.sop));
}

/** The corpus generator's manifest: instance UID to injected box or null. */
export interface GroundTruthManifest {
  schema_version: number;
  instances: Record<string, number[] | null>;
}

export interface GroundTruthComparison {
  agrees: boolean;
  /** Ground-truth positives in the gallery that were not marked. */
  missed: string[];
  /** Marked tiles the ground truth lists as clean. */
  spurious: string[];
}

/** Test-mode check: the marked tiles must be exactly the ground-truth
 * positives among the instances the job processed. */
export function compareWithGroundTruth(
  tiles: GalleryTile[],
  truth: GroundTruthManifest,
): GroundTruthComparison {
  const missed: string[] = [];
  const spurious: string[] = [];
  for (const tile of tiles) {
    const injected = truth.instances[tile.sop];
    const isPositive = injected !== null && injected !== undefined;
    if (isPositive && !tile.marked) {
      missed.push(tile.sop);
    }
    if (!isPositive && tile.marked) {
      spurious.push(tile.sop);
    }
  }
  return { agrees: missed.length === 0 && spurious.length === 0, missed, spurious };
}
