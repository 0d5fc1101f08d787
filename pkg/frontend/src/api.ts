/**
 * Typed client for the gateway HTTP API.
 *
 * Each method maps to exactly one route and returns the parsed response
 * body as-is: every number shown in the UI comes from a server response,
 * never from client-side recomputation.  Mutating routes need the bearer
 * token; the client refuses locally when none has been entered.
 */

import { CohortQueryJson, serializeQuery } from "./query.js";

export interface MetricsSnapshot {
  associations_active: number;
  instances_received_total: number;
  bytes_received_total: number;
  series_processed: number;
  series_deleted: number;
  last_extraction_at: string | null;
  last_purge_at: string | null;
  jobs_by_state: Record<string, number>;
}

export interface QueryResponse {
  count: number;
  documents: Record<string, string | string[]>[];
}

export interface FacetPanelEntry {
  attribute: string;
  buckets: [string, number][];
}

export interface FacetResponse {
  count: number;
  facets: FacetPanelEntry[];
}

export type JobStateName =
  | "queued"
  | "resolving"
  | "converting"
  | "running"
  | "done"
  | "failed"
  | "canceled";

export interface JobJson {
  id: string;
  state: JobStateName;
  plugin: string;
  cohort: CohortQueryJson;
  created_at: string;
  finished_at: string | null;
  counts: {
    matched: number;
    converted: number;
    inferred: number;
    failed: number;
  };
  error: string | null;
  results_collection: string | null;
}

export interface ResultsResponse {
  job: JobJson;
  documents: Record<string, string>[];
}

export interface ExportResponse {
  bundle: string;
  instances: number;
  failures: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`API ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export interface GatewayClientOptions {
  base: string;
  token?: string;
  fetchImpl?: FetchLike;
}

interface RequestOptions {
  method: string;
  path: string;
  body?: string;
  authed?: boolean;
}

export class GatewayClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;
  private token: string;

  constructor(options: GatewayClientOptions) {
    this.base = options.base.replace(/\/+$/, "");
    this.token = options.token ?? "";
    this.fetchImpl =
      options.fetchImpl ?? ((url, init) => globalThis.fetch(url, init));
  }

  /** Token entered once per session; empty string forgets it. */
  setToken(token: string): void {
    this.token = token;
  }

  hasToken(): boolean {
    return this.token !== "";
  }

  private async request(options: RequestOptions): Promise<unknown> {
    const headers: Record<string, string> = {};
    if (options.body !== undefined) {
      headers["Content-Type"] = "application/json";
    }
    if (options.authed) {
      if (this.token === "") {
        throw new ApiError(401, "no API token entered for this session");
      }
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    let response: Response;
    try {
      response = await this.fetchImpl(this.base + options.path, {
        method: options.method,
        headers,
        body: options.body,
      });
    } catch (cause) {
      throw new ApiError(0, `gateway unreachable: ${String(cause)}`);
    }
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response.json();
  }

  async metrics(): Promise<MetricsSnapshot> {
    return (await this.request({
      method: "GET",
      path: "/metrics",
    })) as MetricsSnapshot;
  }

  async collections(): Promise<Record<string, number>> {
    const body = (await this.request({
      method: "GET",
      path: "/collections",
    })) as { collections: Record<string, number> };
    return body.collections;
  }

  /** POST the canonical serialization, so what goes on the wire is exactly
   * the documented query JSON. */
  async query(query: CohortQueryJson): Promise<QueryResponse> {
    return (await this.request({
      method: "POST",
      path: "/query",
      body: serializeQuery(query),
    })) as QueryResponse;
  }

  /** One round trip: match count plus a histogram per requested attribute. */
  async facets(
    query: CohortQueryJson,
    attributes: string[],
  ): Promise<FacetResponse> {
    const params = new URLSearchParams({
      attributes: attributes.join(","),
      q: serializeQuery(query),
    });
    return (await this.request({
      method: "GET",
      path: `/facets?${params.toString()}`,
    })) as FacetResponse;
  }

  async submitJob(query: CohortQueryJson, plugin: string): Promise<JobJson> {
    return (await this.request({
      method: "POST",
      path: "/jobs",
      body: JSON.stringify({ query: JSON.parse(serializeQuery(query)), plugin }),
      authed: true,
    })) as JobJson;
  }

  async jobs(): Promise<JobJson[]> {
    const body = (await this.request({ method: "GET", path: "/jobs" })) as {
      jobs: JobJson[];
    };
    return body.jobs;
  }

  async job(jobId: string): Promise<JobJson> {
    return (await this.request({
      method: "GET",
      path: `/jobs/${encodeURIComponent(jobId)}`,
    })) as JobJson;
  }

  async cancelJob(jobId: string): Promise<JobJson> {
    return (await this.request({
      method: "POST",
      path: `/jobs/${encodeURIComponent(jobId)}/cancel`,
      authed: true,
    })) as JobJson;
  }

  async results(jobId: string): Promise<ResultsResponse> {
    return (await this.request({
      method: "GET",
      path: `/results/${encodeURIComponent(jobId)}`,
    })) as ResultsResponse;
  }

  resultPngUrl(jobId: string, sopInstanceUid: string, annotated: boolean): string {
    const id = encodeURIComponent(jobId);
    const sop = encodeURIComponent(sopInstanceUid);
    return `${this.base}/results/${id}/png/${sop}?annotated=${annotated}`;
  }

  async exportBundle(
    query: CohortQueryJson,
    options: { stripList?: string[]; saltHex?: string } = {},
  ): Promise<ExportResponse> {
    const payload: Record<string, unknown> = {
      query: JSON.parse(serializeQuery(query)),
    };
    if (options.stripList !== undefined) {
      payload.strip_list = options.stripList;
    }
    if (options.saltHex !== undefined) {
      payload.salt_hex = options.saltHex;
    }
    return (await this.request({
      method: "POST",
      path: "/export",
      body: JSON.stringify(payload),
      authed: true,
    })) as ExportResponse;
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as Record<string, unknown>;
    const detail = body.error ?? body.detail;
    if (typeof detail === "string") {
      return detail;
    }
    return JSON.stringify(detail ?? body);
  } catch {
    return response.statusText || "request failed";
  }
}
