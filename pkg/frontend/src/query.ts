/**
 * Filter drafts and their compilation into the gateway's cohort-query JSON.
 *
 * A draft is what the user edits: an ordered list of predicate rows over one
 * collection, each row a (attribute, operator, value-text) triple.  A draft
 * either compiles to a valid query or reports per-row validation errors —
 * nothing is ever sent for an invalid draft.
 */

export type Operator = "eq" | "in" | "range" | "present";

export const OPERATORS: readonly Operator[] = ["eq", "in", "range", "present"];

/** One editable predicate row.  The meaning of `value` follows the operator:
 * `eq` takes the literal value, `in` a comma-separated list, `range` a
 * `LO..HI` pair, and `present` ignores it. */
export interface FilterRow {
  attribute: string;
  operator: Operator;
  value: string;
}

export interface FilterDraft {
  collection: string;
  rows: FilterRow[];
  limit?: number;
  offset?: number;
  project?: string[];
}

export type PredicateJson =
  | { attr: string; op: "eq"; value: string }
  | { attr: string; op: "in"; values: string[] }
  | { attr: string; op: "range"; lo: string; hi: string }
  | { attr: string; op: "present" };

export interface CohortQueryJson {
  collection: string;
  where: PredicateJson[];
  project?: string[];
  limit?: number;
  offset?: number;
}

export interface RowError {
  row: number;
  message: string;
}

export type CompileResult =
  | { ok: true; query: CohortQueryJson }
  | { ok: false; errors: RowError[] };

/** DICOM attribute keywords: CamelCase ASCII, as in the standard dictionary.
 * Unknown-but-well-formed keywords are left to the server to reject. */
const KEYWORD = /^[A-Z][A-Za-z0-9]{0,63}$/;

export function validateRow(row: FilterRow): string | null {
  if (!KEYWORD.test(row.attribute)) {
    return `not an attribute keyword: ${JSON.stringify(row.attribute)}`;
  }
  switch (row.operator) {
    case "eq":
      return row.value === "" ? "eq needs a value" : null;
    case "in": {
      const values = splitList(row.value);
      if (values.length === 0) {
        return "in needs at least one comma-separated value";
      }
      return null;
    }
    case "range": {
      const bounds = row.value.split("..");
      if (bounds.length !== 2 || bounds[0] === "" || bounds[1] === "") {
        return "range needs LO..HI";
      }
      if (bounds[0]! > bounds[1]!) {
        return "range low bound exceeds high bound";
      }
      return null;
    }
    case "present":
      return null;
  }
}

function splitList(text: string): string[] {
  return text
    .split(",")
    .map((part) => part.trim())
    .filter((part) => part !== "");
}

function compileRow(row: FilterRow): PredicateJson {
  switch (row.operator) {
    case "eq":
      return { attr: row.attribute, op: "eq", value: row.value };
    case "in":
      return { attr: row.attribute, op: "in", values: splitList(row.value) };
    case "range": {
      const [lo, hi] = row.value.split("..");
      return { attr: row.attribute, op: "range", lo: lo!, hi: hi! };
    }
    case "present":
      return { attr: row.attribute, op: "present" };
  }
}

/** Compile a draft, preserving row order; all row errors are reported at
 * once so the UI can mark every offending row in a single pass. */
export function compileDraft(draft: FilterDraft): CompileResult {
  const errors: RowError[] = [];
  if (draft.collection === "") {
    errors.push({ row: -1, message: "draft names no collection" });
  }
  draft.rows.forEach((row, index) => {
    const message = validateRow(row);
    if (message !== null) {
      errors.push({ row: index, message });
    }
  });
  if (errors.length > 0) {
    return { ok: false, errors };
  }
  const query: CohortQueryJson = {
    collection: draft.collection,
    where: draft.rows.map(compileRow),
  };
  if (draft.project !== undefined) {
    query.project = [...draft.project];
  }
  if (draft.limit !== undefined) {
    query.limit = draft.limit;
  }
  if (draft.offset !== undefined && draft.offset !== 0) {
    query.offset = draft.offset;
  }
  return { ok: true, query };
}

/**
 * Canonical wire form of a query.
 *
 * Key order is fixed (collection, where, project, limit, offset; predicates
 * as attr, op, then operands) and the output is compact ASCII JSON, so two
 * clients building the same cohort produce byte-identical request bodies.
 */
export function serializeQuery(query: CohortQueryJson): string {
  const where = query.where.map((predicate) => {
    switch (predicate.op) {
      case "eq":
        return { attr: predicate.attr, op: "eq", value: predicate.value };
      case "in":
        return { attr: predicate.attr, op: "in", values: predicate.values };
      case "range":
        return {
          attr: predicate.attr,
          op: "range",
          lo: predicate.lo,
          hi: predicate.hi,
        };
      case "present":
        return { attr: predicate.attr, op: "present" };
    }
  });
  const canonical: Record<string, unknown> = {
    collection: query.collection,
    where,
  };
  if (query.project !== undefined) {
    canonical.project = query.project;
  }
  if (query.limit !== undefined) {
    canonical.limit = query.limit;
  }
  if (query.offset !== undefined && query.offset !== 0) {
    canonical.offset = query.offset;
  }
  return JSON.stringify(canonical);
}
