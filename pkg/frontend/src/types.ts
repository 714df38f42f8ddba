/**
 * Payload types for the evscout HTTP API.
 *
 * These mirror the service's JSON exactly; nothing here is derived state.
 * Optional-looking fields that the service always sends are typed
 * non-optional with null where the service sends null.
 */

export type QueryKind = "risk" | "has";
export type EvidenceSourceTag = "generated" | "extracted_baseline";
export type EvidenceStatusTag = "active" | "abstained";
export type RunMode = "sequential" | "single" | "baseline";

export const RELEVANCE_SCALE = [
  "not_useful",
  "weak_correlation",
  "partially_useful",
  "useful",
  "very_useful",
] as const;

export type RelevanceValue = (typeof RELEVANCE_SCALE)[number];

/** Human captions for the five-point scale, in scale order. */
export const RELEVANCE_CAPTIONS: Record<RelevanceValue, string> = {
  not_useful: "Not useful",
  weak_correlation: "Weak correlation",
  partially_useful: "Partially useful",
  useful: "Useful",
  very_useful: "Very useful",
};

export interface Highlight {
  note_id: string;
  sentence_index: number;
  score: number;
}

export interface EvidenceItem {
  id: string;
  patient_id: string;
  condition: string;
  kind: QueryKind;
  source: EvidenceSourceTag;
  text: string;
  source_note_id: string;
  source_chunk_index: number | null;
  confidence: number | null;
  highlights: Highlight[];
  status: EvidenceStatusTag;
  score: number | null;
  /** Other places the same text appeared, as [note_id, chunk_index] pairs. */
  duplicate_sources: [string, number][];
}

export interface EvidenceBundle {
  patient_id: string;
  condition: string;
  items: EvidenceItem[];
  run_id: string;
}

export interface EvidenceRequest {
  condition: string;
  mode?: RunMode;
  style?: string;
  abstain_threshold?: number;
  idempotency_key?: string;
}

export interface EvidenceResponse {
  run_id: string;
  cached: boolean;
  excluded: boolean;
  bundle: EvidenceBundle;
}

export interface SentenceSpan {
  note_id: string;
  index: number;
  text: string;
  start: number;
  end: number;
}

export interface NoteDetail {
  note_id: string;
  patient_id: string;
  category: string;
  timestamp: string | null;
  text: string;
  sentences: SentenceSpan[];
}

export interface PatientNotesResponse {
  patient_id: string;
  notes: NoteDetail[];
}

export interface PatientRow {
  patient_id: string;
  note_count: number;
}

export interface HealthResponse {
  status: string;
  corpus_notes: number;
  patients: number;
}

export interface RunRow {
  run_id: string;
  kind: string;
  patient_id: string | null;
  condition: string | null;
  excluded: boolean;
}

export interface AnnotationRow {
  evidence_id: string;
  annotator_id: string;
  present_in_note: boolean;
  relevance: string;
}

export interface AnnotationsImportResponse {
  imported: number;
  total: number;
}

export interface FactorVerdict {
  text: string;
  kind: string;
  present_in_note: boolean | null;
  valid_for_diagnosis: boolean | null;
}

export interface Verdict {
  evidence_id: string;
  factors: FactorVerdict[];
  hallucinated: boolean;
  relevance_fraction: number | null;
  unevaluable: boolean;
}

export interface EvaluateSummary {
  useful_pct: number;
  not_useful_pct: number;
  hallucination_pct: number;
  evaluated: number;
  self_evaluation: boolean;
}

export interface EvaluateResponse {
  run_id: string;
  cached: boolean;
  verdicts: Verdict[];
  summary: EvaluateSummary;
}

export interface ReportResponse {
  run_id: string;
  parent_run_id: string;
  patient_id: string | null;
  condition: string | null;
  useful_pct: number;
  not_useful_pct: number;
  hallucination_pct: number;
  summary: EvaluateSummary;
}

export interface JobStartResponse {
  job_id: string;
}

export interface JobStatus {
  job_id: string;
  status: "pending" | "done" | "error";
  run_id?: string;
  error?: string;
}
