// Query composer state: selections plus client-side validation that mirrors
// the server's pattern rules, so the UI never submits a pattern the service
// would reject for vocabulary reasons.

import type {
  Aggregation,
  BiOp,
  DimRole,
  Vocabulary,
  WirePattern,
} from "./types";

export interface MeasureSelection {
  id: string;
  agg: Aggregation;
}

export interface DimensionSelection {
  id: string;
  role: DimRole;
  value?: string;
}

export interface ComposerState {
  op: BiOp;
  measures: MeasureSelection[];
  dimensions: DimensionSelection[];
}

export function emptyComposer(): ComposerState {
  return { op: "ANALYSIS", measures: [], dimensions: [] };
}

/** Dimensions connected to at least one selected measure. */
export function selectableDimensions(
  vocab: Vocabulary,
  state: ComposerState,
): string[] {
  const out = new Set<string>();
  for (const sel of state.measures) {
    const m = vocab.measures.find((v) => v.id === sel.id);
    if (m) {
      for (const d of m.dimensions) out.add(d);
    }
  }
  return [...out].sort();
}

export function validateComposer(vocab: Vocabulary, state: ComposerState): string[] {
  const issues: string[] = [];
  if (!vocab.ops.includes(state.op)) {
    issues.push(`unknown op: ${state.op}`);
  }
  if (state.measures.length === 0) {
    issues.push("select at least one measure");
  }
  const measureIds = new Set(vocab.measures.map((m) => m.id));
  const dimensionIds = new Set(vocab.dimensions.map((d) => d.id));
  state.measures.forEach((m, i) => {
    if (!measureIds.has(m.id)) issues.push(`measures[${i}]: unknown id ${m.id}`);
    if (!vocab.aggregations.includes(m.agg)) {
      issues.push(`measures[${i}]: unknown aggregation ${m.agg}`);
    }
  });
  const seen = new Set<string>();
  state.measures.forEach((m, i) => {
    if (seen.has(m.id)) issues.push(`measures[${i}]: duplicate measure ${m.id}`);
    seen.add(m.id);
  });
  const connected = new Set(selectableDimensions(vocab, state));
  state.dimensions.forEach((d, i) => {
    if (!dimensionIds.has(d.id)) issues.push(`dimensions[${i}]: unknown id ${d.id}`);
    else if (!connected.has(d.id)) {
      issues.push(`dimensions[${i}]: ${d.id} is not connected to the selected measures`);
    }
    if (d.role === "FILTER" && !d.value) {
      issues.push(`dimensions[${i}]: filter needs a value`);
    }
    if (d.role === "GROUP_BY" && d.value !== undefined) {
      issues.push(`dimensions[${i}]: group-by must not carry a value`);
    }
  });
  return issues;
}

export function canSubmit(vocab: Vocabulary, state: ComposerState): boolean {
  return validateComposer(vocab, state).length === 0;
}

/** Wire form of the composed pattern (only when valid). */
export function toWirePattern(state: ComposerState): WirePattern {
  return {
    op: state.op,
    measures: state.measures.map((m) => ({ id: m.id, agg: m.agg })),
    dimensions: state.dimensions.map((d) =>
      d.role === "FILTER"
        ? { id: d.id, role: d.role, value: d.value }
        : { id: d.id, role: d.role },
    ),
  };
}

/** Composer selections reproducing an accepted recommendation exactly. */
export function fromWirePattern(pattern: WirePattern): ComposerState {
  return {
    op: pattern.op,
    measures: pattern.measures.map((m) => ({ id: m.id, agg: m.agg })),
    dimensions: pattern.dimensions.map((d) =>
      d.value !== undefined
        ? { id: d.id, role: d.role, value: d.value }
        : { id: d.id, role: d.role },
    ),
  };
}
