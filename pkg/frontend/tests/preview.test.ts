import { describe, expect, it } from "vitest";

import { FetchLike, GatewayClient } from "../src/api.js";
import { Previewer } from "../src/preview.js";
import { FilterDraft } from "../src/query.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

interface Exchange {
  url: string;
  respond: (response: Response) => void;
}

/** Fetch stub whose responses are released manually, so tests control the
 * exact arrival order of concurrent requests. */
function manualFetch(): { fetch: FetchLike; exchanges: Exchange[] } {
  const exchanges: Exchange[] = [];
  const fetch: FetchLike = (url) =>
    new Promise<Response>((resolve) => {
      exchanges.push({ url, respond: resolve });
    });
  return { fetch, exchanges };
}

function previewDraft(rows: FilterDraft["rows"] = []): FilterDraft {
  return { collection: "chest", rows };
}

const FACETS = ["Modality"];

function facetBody(count: number) {
  return {
    count,
    facets: [{ attribute: "Modality", buckets: [["DX", count]] }],
  };
}

describe("build-and-preview", () => {
  it("returns the server's count and facet panel in one round trip", async () => {
    let requests = 0;
    const client = new GatewayClient({
      base: "http://gw",
      fetchImpl: async (url) => {
        requests += 1;
        expect(url).toContain("/facets?");
        return jsonResponse(200, facetBody(7));
      },
    });
    const previewer = new Previewer(client, FACETS);
    const outcome = await previewer.preview(previewDraft());
    expect(outcome).toEqual({
      kind: "ok",
      version: 1,
      count: 7,
      facets: [{ attribute: "Modality", buckets: [["DX", 7]] }],
    });
    expect(requests).toBe(1);
  });

  it("falls back to a count-only query when no facet panel is configured", async () => {
    const bodies: string[] = [];
    const client = new GatewayClient({
      base: "http://gw",
      fetchImpl: async (url, init) => {
        expect(url).toBe("http://gw/query");
        bodies.push(String(init?.body));
        return jsonResponse(200, { count: 3, documents: [] });
      },
    });
    const previewer = new Previewer(client, []);
    const outcome = await previewer.preview(previewDraft());
    expect(outcome.kind).toBe("ok");
    expect(bodies).toEqual(['{"collection":"chest","where":[],"limit":0}']);
  });

  it("never sends a request for an invalid draft", async () => {
    let requests = 0;
    const client = new GatewayClient({
      base: "http://gw",
      fetchImpl: async () => {
        requests += 1;
        return jsonResponse(200, facetBody(0));
      },
    });
    const previewer = new Previewer(client, FACETS);
    const outcome = await previewer.preview(
      previewDraft([{ attribute: "not a keyword", operator: "eq", value: "X" }]),
    );
    expect(outcome.kind).toBe("invalid");
    if (outcome.kind === "invalid") {
      expect(outcome.errors[0]?.row).toBe(0);
    }
    expect(requests).toBe(0);
  });

  it("discards a superseded draft's response even when it arrives last", async () => {
    const { fetch, exchanges } = manualFetch();
    const client = new GatewayClient({ base: "http://gw", fetchImpl: fetch });
    const previewer = new Previewer(client, FACETS);

    const first = previewer.preview(previewDraft());
    const second = previewer.preview(
      previewDraft([{ attribute: "Modality", operator: "eq", value: "DX" }]),
    );
    expect(exchanges.length).toBe(2);
    // The newer draft's response lands first; the older one afterwards.
    exchanges[1]!.respond(jsonResponse(200, facetBody(2)));
    const applied = await second;
    exchanges[0]!.respond(jsonResponse(200, facetBody(99)));
    const stale = await first;

    expect(applied).toMatchObject({ kind: "ok", count: 2 });
    expect(stale).toEqual({ kind: "stale", version: 1 });
  });

  it("surfaces API errors inline and keeps the draft intact", async () => {
    const client = new GatewayClient({
      base: "http://gw",
      fetchImpl: async () =>
        jsonResponse(404, { error: "no collection 'chest'" }),
    });
    const previewer = new Previewer(client, FACETS);
    const draft = previewDraft([
      { attribute: "Modality", operator: "eq", value: "DX" },
    ]);
    const outcome = await previewer.preview(draft);
    expect(outcome).toEqual({
      kind: "error",
      version: 1,
      status: 404,
      message: "no collection 'chest'",
    });
    expect(draft.rows).toHaveLength(1);
  });

  it("reports an unreachable gateway as status 0", async () => {
    const client = new GatewayClient({
      base: "http://gw",
      fetchImpl: async () => {
        throw new TypeError("fetch failed");
      },
    });
    const previewer = new Previewer(client, FACETS);
    const outcome = await previewer.preview(previewDraft());
    expect(outcome).toMatchObject({ kind: "error", status: 0 });
  });
});
