// Pattern-to-sentence templating for recommendation cards and the timeline.

import type { Vocabulary, WirePattern } from "./types";

function labelMap(vocab: Vocabulary): Map<string, string> {
  const out = new Map<string, string>();
  for (const m of vocab.measures) out.set(m.id, m.label);
  for (const d of vocab.dimensions) out.set(d.id, d.label);
  return out;
}

function joinNames(names: string[]): string {
  if (names.length <= 1) return names[0] ?? "";
  return `${names.slice(0, -1).join(", ")} and ${names[names.length - 1]}`;
}

const TEMPLATES: Record<string, (m: string, d: string) => string> = {
  ANALYSIS: (m, d) => (d ? `Analyze ${m} by ${d}` : `Analyze ${m}`),
  "DRILL-DOWN": (m, d) => (d ? `Drill down into ${m} by ${d}` : `Drill down into ${m}`),
  "ROLL-UP": (m, d) => (d ? `Roll up ${m} by ${d}` : `Roll up ${m}`),
  PIVOT: (m, d) => (d ? `Pivot ${m} to ${d}` : `Pivot ${m}`),
  TREND: (m, d) => (d ? `Trend of ${m} over ${d}` : `Trend of ${m}`),
  RANKING: (m, d) => (d ? `Rank ${d} by ${m}` : `Rank by ${m}`),
  COMPARISON: (m, d) => (d ? `Compare ${m} by ${d}` : `Compare ${m}`),
};

export function renderSentence(vocab: Vocabulary, pattern: WirePattern): string {
  const labels = labelMap(vocab);
  const name = (id: string) => labels.get(id) ?? id;
  const measures = joinNames(pattern.measures.map((m) => name(m.id)));
  const groupBys = pattern.dimensions
    .filter((d) => d.role === "GROUP_BY")
    .map((d) => name(d.id));
  const filters = pattern.dimensions
    .filter((d) => d.role === "FILTER")
    .map((d) => `${name(d.id)} = ${d.value}`);
  const template = TEMPLATES[pattern.op] ?? TEMPLATES.ANALYSIS;
  let sentence = template(measures, joinNames(groupBys));
  if (filters.length > 0) {
    sentence += ` where ${filters.join(" and ")}`;
  }
  return sentence;
}
