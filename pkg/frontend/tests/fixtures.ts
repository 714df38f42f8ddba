/** Builders for API-shaped objects used across the test files. */

import type { EvidenceBundle, EvidenceItem, NoteDetail, SentenceSpan } from "../src/types";

export function makeItem(overrides: Partial<EvidenceItem> & { id: string }): EvidenceItem {
  return {
    patient_id: "p1",
    condition: "stroke",
    kind: "risk",
    source: "generated",
    text: `evidence ${overrides.id}`,
    source_note_id: "n1",
    source_chunk_index: 0,
    confidence: null,
    highlights: [],
    status: "active",
    score: null,
    duplicate_sources: [],
    ...overrides,
  };
}

export function makeBundle(items: EvidenceItem[], runId = "r1"): EvidenceBundle {
  return { patient_id: "p1", condition: "stroke", items, run_id: runId };
}

/** A note whose sentence spans are given explicitly as [start, end] pairs. */
export function makeNote(
  noteId: string,
  text: string,
  spans: Array<[number, number]>,
): NoteDetail {
  const sentences: SentenceSpan[] = spans.map(([start, end], index) => ({
    note_id: noteId,
    index,
    text: text.slice(start, end),
    start,
    end,
  }));
  return {
    note_id: noteId,
    patient_id: "p1",
    category: "physician",
    timestamp: "2024-03-01T08:00:00",
    text,
    sentences,
  };
}
