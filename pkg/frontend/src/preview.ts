/**
 * Live cohort preview: as the user edits the filter draft, fetch the match
 * count and facet panel in one round trip and discard anything stale.
 *
 * Every edit produces a new draft version.  A response is applied only if
 * it answers the *newest* version issued; responses for superseded drafts
 * are discarded even when they arrive out of order, so the panel never
 * shows numbers for a draft the user has already moved past.
 */

import { ApiError, FacetPanelEntry, GatewayClient } from "./api.js";
import { compileDraft, FilterDraft, RowError } from "./query.js";

export type PreviewOutcome =
  | { kind: "ok"; version: number; count: number; facets: FacetPanelEntry[] }
  | { kind: "invalid"; version: number; errors: RowError[] }
  | { kind: "stale"; version: number }
  | { kind: "error"; version: number; status: number; message: string };

export class Previewer {
  private version = 0;

  constructor(
    private readonly client: GatewayClient,
    private readonly facetAttributes: string[],
  ) {}

  /** Version of the most recent preview request. */
  currentVersion(): number {
    return this.version;
  }

  async preview(draft: FilterDraft): Promise<PreviewOutcome> {
    const version = ++this.version;
    const compiled = compileDraft(draft);
    if (!compiled.ok) {
      // Invalid drafts never reach the network; the row errors are the
      // feedback.  The version still advances so in-flight responses for
      // the previous draft get discarded.
      return { kind: "invalid", version, errors: compiled.errors };
    }
    try {
      if (this.facetAttributes.length > 0) {
        const response = await this.client.facets(
          compiled.query,
          this.facetAttributes,
        );
        if (version !== this.version) {
          return { kind: "stale", version };
        }
        return {
          kind: "ok",
          version,
          count: response.count,
          facets: response.facets,
        };
      }
      // No facet panel configured: a count-only query (limit 0 returns no
      // documents; the count covers the whole match set).
      const response = await this.client.query({
        ...compiled.query,
        limit: 0,
      });
      if (version !== this.version) {
        return { kind: "stale", version };
      }
      return { kind: "ok", version, count: response.count, facets: [] };
    } catch (error) {
      if (version !== this.version) {
        return { kind: "stale", version };
      }
      // Surface the failure inline; the caller keeps the draft untouched.
      if (error instanceof ApiError) {
        return {
          kind: "error",
          version,
          status: error.status,
          message: error.detail,
        };
      }
      throw error;
    }
  }
}
