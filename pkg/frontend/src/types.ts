// Wire types exchanged with the recommendation service (HTTP+JSON).

export type BiOp =
  | "ANALYSIS"
  | "DRILL-DOWN"
  | "ROLL-UP"
  | "PIVOT"
  | "TREND"
  | "RANKING"
  | "COMPARISON";

export type Aggregation = "COUNT" | "SUM" | "AVG" | "MIN" | "MAX";
export type DimRole = "GROUP_BY" | "FILTER";

export interface WireMeasure {
  id: string;
  agg: Aggregation;
}

export interface WireDimension {
  id: string;
  role: DimRole;
  value?: string;
}

export interface WirePattern {
  op: BiOp;
  measures: WireMeasure[];
  dimensions: WireDimension[];
}

export interface WireIntent {
  op: BiOp;
  mg: string;
}

export interface WireRecommendation {
  rank: number;
  score: number;
  pattern: WirePattern;
  intent?: WireIntent;
  provenance: Record<string, unknown>;
}

export interface QueryResponse {
  id: string;
  state_index: number;
  echo: WirePattern;
  recommendations: WireRecommendation[];
}

export interface FeedbackExport {
  top_ids: string[];
  selected_ranks: number[];
  votes: Record<string, number>;
}

export interface SessionExport {
  id: string;
  task_mgs: string[];
  states: WirePattern[];
  pending: WireRecommendation[];
  feedback: FeedbackExport[];
  feedback_metrics?: { precision_at_3: number; mrr: number };
}

export interface VocabularyMeasure {
  id: string;
  label: string;
  measure_group: string | null;
  dimensions: string[];
}

export interface VocabularyDimension {
  id: string;
  label: string;
  dimension_group: string | null;
}

export interface Vocabulary {
  counts: Record<string, number>;
  ops: BiOp[];
  aggregations: Aggregation[];
  roles: DimRole[];
  measures: VocabularyMeasure[];
  dimensions: VocabularyDimension[];
  measure_groups: { id: string; label: string }[];
  dimension_groups: { id: string; label: string }[];
}
