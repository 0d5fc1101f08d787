/**
 * Browser entry point: wires the filter editor, facet panel, dashboard,
 * and job gallery together.  All domain logic lives in the sibling
 * modules; this file only builds DOM and routes events.
 */

import { ApiError, GatewayClient, JobJson } from "./api.js";
import {
  buildGallery,
  GalleryTile,
  JobMonitor,
  submissionGuard,
} from "./jobs.js";
import { drawOverlay } from "./overlay.js";
import { Previewer } from "./preview.js";
import { compileDraft, FilterDraft, FilterRow, OPERATORS } from "./query.js";
import { DashboardPoller, initialState } from "./state.js";

const FACET_ATTRIBUTES = ["Modality", "BodyPartExamined", "Manufacturer"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function must<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

class App {
  private readonly client: GatewayClient;
  private readonly previewer: Previewer;
  private readonly monitor: JobMonitor;
  private readonly state = initialState();
  private readonly draft: FilterDraft = { collection: "", rows: [] };
  private previewCount: number | null = null;
  private tiles: GalleryTile[] = [];

  constructor() {
    const base = `${location.protocol}//${location.host}`;
    this.client = new GatewayClient({ base });
    this.previewer = new Previewer(this.client, FACET_ATTRIBUTES);
    this.monitor = new JobMonitor(this.client);
  }

  async start(): Promise<void> {
    must<HTMLInputElement>("token").addEventListener("change", (event) => {
      this.client.setToken((event.target as HTMLInputElement).value.trim());
      this.renderGuard();
    });
    must<HTMLButtonElement>("add-row").addEventListener("click", () => {
      this.draft.rows.push({ attribute: "", operator: "eq", value: "" });
      this.renderRows();
    });
    must<HTMLButtonElement>("submit-job").addEventListener("click", () => {
      void this.submitJob();
    });

    const poller = new DashboardPoller(this.client, this.state, () =>
      this.renderDashboard(),
    );
    await poller.tick().catch(() => undefined);
    poller.start();

    await this.loadCollections();
    this.renderRows();
    await this.refreshPreview();
  }

  private async loadCollections(): Promise<void> {
    const select = must<HTMLSelectElement>("collection");
    try {
      const collections = await this.client.collections();
      select.replaceChildren();
      for (const name of Object.keys(collections).sort()) {
        const option = el("option", undefined, name);
        option.value = name;
        select.append(option);
      }
      this.draft.collection = select.value;
    } catch {
      // The picker stays empty until the gateway is reachable.
    }
    select.addEventListener("change", () => {
      this.draft.collection = select.value;
      void this.refreshPreview();
    });
  }

  private renderRows(): void {
    const host = must<HTMLDivElement>("rows");
    host.replaceChildren();
    this.draft.rows.forEach((row, index) => {
      host.append(this.renderRow(row, index));
    });
  }

  private renderRow(row: FilterRow, index: number): HTMLDivElement {
    const container = el("div", "filter-row");
    const attribute = el("input") as HTMLInputElement;
    attribute.placeholder = "Attribute (e.g. Modality)";
    attribute.value = row.attribute;
    const operator = el("select") as HTMLSelectElement;
    for (const op of OPERATORS) {
      const option = el("option", undefined, op);
      option.value = op;
      operator.append(option);
    }
    operator.value = row.operator;
    const value = el("input") as HTMLInputElement;
    value.placeholder = "value | v1,v2 | LO..HI";
    value.value = row.value;
    const error = el("span", "row-error");
    const remove = el("button", undefined, "×");

    const onEdit = () => {
      row.attribute = attribute.value.trim();
      row.operator = operator.value as FilterRow["operator"];
      row.value = value.value.trim();
      void this.refreshPreview();
    };
    attribute.addEventListener("change", onEdit);
    operator.addEventListener("change", onEdit);
    value.addEventListener("change", onEdit);
    remove.addEventListener("click", () => {
      this.draft.rows.splice(index, 1);
      this.renderRows();
      void this.refreshPreview();
    });

    container.append(attribute, operator, value, remove, error);
    return container;
  }

  private async refreshPreview(): Promise<void> {
    if (this.draft.collection === "") {
      return;
    }
    const outcome = await this.previewer.preview(this.draft);
    const status = must<HTMLSpanElement>("preview-status");
    const rowNodes = document.querySelectorAll<HTMLSpanElement>(".row-error");
    rowNodes.forEach((node) => (node.textContent = ""));
    switch (outcome.kind) {
      case "stale":
        return;
      case "invalid":
        for (const { row, message } of outcome.errors) {
          const node = rowNodes.item(row);
          if (node !== null) {
            node.textContent = message;
          }
        }
        status.textContent = "fix the marked rows";
        this.previewCount = null;
        break;
      case "error":
        status.textContent = `gateway error ${outcome.status}: ${outcome.message}`;
        this.previewCount = null;
        break;
      case "ok": {
        this.previewCount = outcome.count;
        must<HTMLSpanElement>("match-count").textContent = String(
          outcome.count,
        );
        status.textContent = "";
        const panel = must<HTMLDivElement>("facets");
        panel.replaceChildren();
        for (const facet of outcome.facets) {
          const block = el("div", "facet");
          block.append(el("h4", undefined, facet.attribute));
          const list = el("ul");
          for (const [label, count] of facet.buckets) {
            list.append(el("li", undefined, `${label} — ${count}`));
          }
          block.append(list);
          panel.append(block);
        }
        break;
      }
    }
    this.renderGuard();
  }

  private renderGuard(): void {
    const plugin = must<HTMLInputElement>("plugin").value.trim();
    const guard = submissionGuard(
      this.previewCount,
      plugin,
      this.client.hasToken(),
    );
    const button = must<HTMLButtonElement>("submit-job");
    button.disabled = !guard.enabled;
    must<HTMLSpanElement>("submit-hint").textContent = guard.hint ?? "";
  }

  private async submitJob(): Promise<void> {
    const plugin = must<HTMLInputElement>("plugin").value.trim();
    const status = must<HTMLSpanElement>("job-status");
    try {
      const result = compileDraft(this.draft);
      if (!result.ok) {
        return;
      }
      const job = await this.monitor.submit(result.query, plugin);
      status.textContent = `job ${job.id}: ${job.state}`;
      const done = await this.monitor.watch(job.id, (snapshot) => {
        status.textContent = `job ${snapshot.id}: ${snapshot.state}`;
      });
      if (done.state === "done") {
        await this.showResults(done);
      } else {
        status.textContent = `job ${done.id}: ${done.state}${
          done.error ? ` — ${done.error}` : ""
        }`;
      }
    } catch (error) {
      status.textContent =
        error instanceof ApiError ? error.message : String(error);
    }
  }

  private async showResults(job: JobJson): Promise<void> {
    const response = await this.client.results(job.id);
    this.tiles = buildGallery(this.client, job.id, response.documents);
    const gallery = must<HTMLDivElement>("gallery");
    gallery.replaceChildren();
    for (const tile of this.tiles) {
      const card = el("figure", tile.marked ? "tile marked" : "tile");
      const stack = el("div", "stack");
      const image = el("img") as HTMLImageElement;
      image.src = tile.pngUrl;
      const canvas = el("canvas") as HTMLCanvasElement;
      image.addEventListener("load", () =>
        drawOverlay(canvas, image, tile.boxes),
      );
      stack.append(image, canvas);
      const caption = el(
        "figcaption",
        undefined,
        `${tile.sop} (${tile.boxes.length} box${tile.boxes.length === 1 ? "" : "es"})`,
      );
      card.append(stack, caption);
      if (tile.annotatedUrl !== null) {
        const toggle = el("button", undefined, "server PNG");
        let showingServer = false;
        toggle.addEventListener("click", () => {
          showingServer = !showingServer;
          image.src = showingServer ? tile.annotatedUrl! : tile.pngUrl;
          canvas.style.display = showingServer ? "none" : "block";
          toggle.textContent = showingServer ? "client overlay" : "server PNG";
        });
        card.append(toggle);
      }
      gallery.append(card);
    }
  }

  private renderDashboard(): void {
    const metrics = this.state.metrics;
    if (metrics !== null) {
      must<HTMLSpanElement>("metrics").textContent =
        `received ${metrics.value.instances_received_total} · ` +
        `processed ${metrics.value.series_processed} · ` +
        `deleted ${metrics.value.series_deleted} · ` +
        `as of ${metrics.receivedAt}`;
    }
    const jobs = this.state.jobs;
    if (jobs !== null) {
      const list = must<HTMLUListElement>("jobs");
      list.replaceChildren();
      for (const job of jobs.value) {
        list.append(
          el(
            "li",
            undefined,
            `${job.id} · ${job.plugin} · ${job.state} · matched ${job.counts.matched}`,
          ),
        );
      }
    }
  }
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    void new App().start();
  });
}
